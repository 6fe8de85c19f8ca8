//! Command-line entry point: `kgmem <subcommand>`.

use std::ffi::OsString;
use std::io::{Read, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use kgmem_core::graph::MemoryGraph;
use kgmem_core::pipeline::MemoryEngine;
use kgmem_core::retriever::{MemoryMode, RetrievalContext};
use kgmem_core::standardizer::RawTrajectory;

use crate::app::{eval_summary, eval_sweep_csv, parse_records, router, stats, AppState};
use crate::config::ServiceConfig;
use crate::error::CliError;
use crate::providers;

#[derive(Debug, Parser)]
#[command(
    name = "kgmem",
    version,
    about = "Graph-structured long-term memory for LLM agents"
)]
pub struct Cli {
    /// Graph snapshot directory.
    #[arg(long, global = true)]
    pub graph: Option<PathBuf>,
    /// Flat TOML settings file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Use the offline template mock instead of network providers.
    #[arg(long, global = true)]
    pub mock_providers: bool,
    /// JSON array of scripted mock rules, tried before the template mock.
    #[arg(long, global = true)]
    pub mock_script: Option<PathBuf>,
    #[arg(long, global = true)]
    pub top_k: Option<usize>,
    #[arg(long, global = true)]
    pub hop_limit: Option<usize>,
    #[arg(long, global = true)]
    pub focus_cap: Option<usize>,
    /// Merge-candidate similarity threshold.
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub tau: Option<f64>,
    /// Merge candidates examined per node.
    #[arg(long, global = true)]
    pub m: Option<usize>,
    #[arg(long, global = true)]
    pub tau_conf: Option<f64>,
    #[arg(long, global = true)]
    pub epsilon_fraction: Option<f64>,
    /// Reference score scaling epsilon; defaults to the mean base score.
    #[arg(long, global = true)]
    pub base_score: Option<f64>,
    /// Seed for sampled statistics.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Add trajectories from a JSONL file (`-` for stdin).
    Ingest { file: PathBuf },
    /// Retrieve and compress memory for a query; prints the response JSON.
    Query {
        query: String,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        task_type: Option<String>,
        #[arg(long, default_value = "")]
        date: String,
    },
    /// Run one maintenance merge pass.
    Maintain,
    /// Information-density metrics over EvalRecord JSONL.
    Eval {
        #[arg(long)]
        records: PathBuf,
        /// Print the utility/cost sweep as CSV.
        #[arg(long, conflicts_with = "json")]
        sweep: bool,
        /// Print the full summary as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Print graph statistics.
    Stats,
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        listen: Option<String>,
    },
}

impl Cli {
    fn apply(&self, cfg: &mut ServiceConfig) {
        if let Some(g) = &self.graph {
            cfg.graph = Some(g.clone());
        }
        if self.mock_providers {
            cfg.mock_providers = true;
        }
        if let Some(s) = &self.mock_script {
            cfg.mock_script = Some(s.clone());
        }
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { cfg.$f = v; })* };
        }
        set!(
            top_k,
            hop_limit,
            focus_cap,
            tau,
            m,
            tau_conf,
            epsilon_fraction,
            seed
        );
        if self.base_score.is_some() {
            cfg.base_score = self.base_score;
        }
        if let Command::Serve { listen: Some(l) } = &self.command {
            cfg.listen = l.clone();
        }
    }
}

/// Parse `args`, run the command and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let _ = tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_env("KGMEM_LOG"))
        .with_writer(std::io::stderr)
        .try_init();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn config_for(cli: &Cli) -> Result<ServiceConfig, CliError> {
    let mut cfg = ServiceConfig::load(cli.config.as_deref(), std::env::vars())?;
    cli.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

/// Load the snapshot in `cfg.graph`, or start empty when there is none yet.
pub fn load_graph(cfg: &ServiceConfig) -> Result<MemoryGraph, CliError> {
    match &cfg.graph {
        Some(dir) if dir.join("meta.json").exists() => {
            MemoryGraph::load_with_dim(dir, cfg.embedding_dim).map_err(|e| {
                CliError::Runtime(format!("loading graph from {}: {e}", dir.display()))
            })
        }
        _ => Ok(MemoryGraph::new(cfg.embedding_dim)),
    }
}

fn save_graph(cfg: &ServiceConfig, graph: &MemoryGraph) -> Result<(), CliError> {
    match &cfg.graph {
        Some(dir) => graph
            .save(dir)
            .map_err(|e| CliError::Runtime(format!("saving graph to {}: {e}", dir.display()))),
        None => {
            tracing::warn!("no --graph directory; changes are not saved");
            Ok(())
        }
    }
}

fn read_input(path: &Path) -> Result<String, CliError> {
    if path.as_os_str() == "-" {
        let mut s = String::new();
        std::io::stdin()
            .read_to_string(&mut s)
            .map_err(|e| CliError::Runtime(format!("reading stdin: {e}")))?;
        return Ok(s);
    }
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))
}

fn engine(cfg: &ServiceConfig) -> Result<MemoryEngine, CliError> {
    Ok(MemoryEngine::new(providers::build(cfg)?, cfg.engine()))
}

/// Print to stdout; a closed pipe (for example `| head`) is not an error.
macro_rules! out {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

fn pretty<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("response types serialize")
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let cfg = config_for(&cli)?;
    match cli.command {
        Command::Ingest { file } => {
            let text = read_input(&file)?;
            let trajectories = text
                .lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(i, l)| {
                    serde_json::from_str::<RawTrajectory>(l).map_err(|e| {
                        CliError::Validation(format!("trajectory line {}: {e}", i + 1))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let engine = engine(&cfg)?;
            let mut graph = load_graph(&cfg)?;
            let mut outcome = Ok(());
            for raw in &trajectories {
                match engine.create(&mut graph, raw) {
                    Ok(report) => out!(
                        "{}",
                        serde_json::to_string(&report).expect("report serializes")
                    ),
                    Err(e) => {
                        outcome = Err(e.into());
                        break;
                    }
                }
            }
            // keep the trajectories that did succeed
            save_graph(&cfg, &graph)?;
            outcome
        }
        Command::Query {
            query,
            mode,
            task_type,
            date,
        } => {
            let mut retrieval = cfg.retrieval();
            if let Some(m) = mode {
                retrieval.mode_override = Some(m.parse::<MemoryMode>()?);
            }
            let context = RetrievalContext {
                task_type,
                ..Default::default()
            };
            let graph = load_graph(&cfg)?;
            let response = engine(&cfg)?.retrieve_and_compress(
                &graph,
                &query,
                Some(&retrieval),
                &context,
                &date,
            )?;
            out!("{}", response.canonical_json());
            Ok(())
        }
        Command::Maintain => {
            let engine = engine(&cfg)?;
            let mut graph = load_graph(&cfg)?;
            let report = engine.update(&mut graph, None, None)?;
            save_graph(&cfg, &graph)?;
            out!("{}", pretty(&report));
            Ok(())
        }
        Command::Eval {
            records,
            sweep,
            json,
        } => {
            let records = parse_records(&read_input(&records)?)?;
            if sweep {
                let _ = std::io::stdout()
                    .lock()
                    .write_all(eval_sweep_csv(&records, &cfg)?.as_bytes());
            } else if json {
                out!("{}", pretty(&eval_summary(&records, &cfg)?));
            } else {
                let s = eval_summary(&records, &cfg)?.summary;
                match s.rho {
                    Some(rho) => out!("rho {rho}"),
                    None => out!("rho none"),
                }
                out!("included {}", s.report.included);
                out!("excluded_redundant {}", s.report.excluded_redundant);
                out!("excluded_empty {}", s.report.excluded_empty);
                out!("epsilon {}", s.epsilon);
            }
            Ok(())
        }
        Command::Stats => {
            out!("{}", pretty(&stats(&load_graph(&cfg)?, &cfg)?));
            Ok(())
        }
        Command::Serve { .. } => serve(cfg),
    }
}

/// Run the service until Ctrl-C, then flush a final snapshot.
pub fn serve(cfg: ServiceConfig) -> Result<(), CliError> {
    let addr: SocketAddr = cfg
        .listen
        .parse()
        .map_err(|e| CliError::Validation(format!("listen address {:?}: {e}", cfg.listen)))?;
    let graph = load_graph(&cfg)?;
    let state = Arc::new(AppState::new(cfg.clone(), engine(&cfg)?, graph));
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Runtime(format!("starting runtime: {e}")))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::Runtime(format!("binding {addr}: {e}")))?;
        let local = listener
            .local_addr()
            .map_err(|e| CliError::Runtime(format!("reading bound address: {e}")))?;
        out!("listening on http://{local}");
        let _ = std::io::stdout().flush();
        tracing::info!(%local, "serving");
        axum::serve(listener, router(state.clone()))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::Runtime(format!("server error: {e}")))
    })?;
    state.persist()
}
