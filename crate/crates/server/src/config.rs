//! Service settings: built-in defaults, then a flat TOML file, then
//! `KGMEM_*` environment variables. Command-line flags are applied last by
//! the CLI.

use std::path::{Path, PathBuf};

use kgmem_core::evaluator::{mean_base_score, DensityConfig, EvalRecord};
use kgmem_core::pipeline::EngineConfig;
use kgmem_core::retriever::{MemoryMode, RetrievalConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const ENV_PREFIX: &str = "KGMEM_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: String,
    /// Snapshot directory. Without one the graph lives in memory only.
    pub graph: Option<PathBuf>,
    pub mock_providers: bool,
    /// JSON array of scripted rules consulted before the template mock.
    pub mock_script: Option<PathBuf>,
    pub chat_base_url: Option<String>,
    pub chat_model: Option<String>,
    pub embed_base_url: Option<String>,
    pub embed_model: Option<String>,
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub embedding_dim: usize,
    pub prompt_dir: Option<PathBuf>,

    pub top_k: usize,
    pub hop_limit: usize,
    pub focus_cap: usize,
    pub theta_route: f64,
    pub min_provenance_hits: usize,
    pub session_rollup: bool,
    pub union_modes: bool,
    pub mode: Option<MemoryMode>,
    pub theta_seg: f64,
    pub theta_equal: f64,
    pub tau: f64,
    pub m: usize,
    pub insertion_disabled: bool,

    pub epsilon_fraction: f64,
    pub tau_conf: f64,
    /// Reference score that scales epsilon. Defaults to the mean `p_base`.
    pub base_score: Option<f64>,

    pub seed: u64,
    pub stats_sample: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        let engine = EngineConfig::default();
        let r = engine.retrieval;
        Self {
            listen: "127.0.0.1:8080".into(),
            graph: None,
            mock_providers: false,
            mock_script: None,
            chat_base_url: None,
            chat_model: None,
            embed_base_url: None,
            embed_model: None,
            api_key_env: None,
            timeout_secs: 60,
            embedding_dim: 64,
            prompt_dir: None,
            top_k: r.top_k,
            hop_limit: r.hop_limit,
            focus_cap: r.focus_cap,
            theta_route: r.theta_route,
            min_provenance_hits: r.min_provenance_hits,
            session_rollup: r.session_rollup,
            union_modes: r.union_modes,
            mode: r.mode_override,
            theta_seg: engine.theta_seg,
            theta_equal: engine.theta_equal,
            tau: engine.tau,
            m: engine.m,
            insertion_disabled: engine.insertion_disabled,
            epsilon_fraction: kgmem_core::evaluator::DEFAULT_EPSILON_FRACTION,
            tau_conf: kgmem_core::evaluator::DEFAULT_TAU_CONF,
            base_score: None,
            seed: kgmem_core::maintenance::DEFAULT_STATS_SEED,
            stats_sample: 100,
        }
    }
}

/// Keys accepted from the environment, mirroring the struct fields.
const KEYS: &[&str] = &[
    "listen",
    "graph",
    "mock_providers",
    "mock_script",
    "chat_base_url",
    "chat_model",
    "embed_base_url",
    "embed_model",
    "api_key_env",
    "timeout_secs",
    "embedding_dim",
    "prompt_dir",
    "top_k",
    "hop_limit",
    "focus_cap",
    "theta_route",
    "min_provenance_hits",
    "session_rollup",
    "union_modes",
    "mode",
    "theta_seg",
    "theta_equal",
    "tau",
    "m",
    "insertion_disabled",
    "epsilon_fraction",
    "tau_conf",
    "base_score",
    "seed",
    "stats_sample",
];

/// Environment strings are typed by shape: integers, then floats, then
/// booleans, otherwise kept as strings.
fn env_value(raw: &str) -> toml::Value {
    if let Ok(i) = raw.parse::<i64>() {
        return toml::Value::Integer(i);
    }
    if let Ok(f) = raw.parse::<f64>() {
        return toml::Value::Float(f);
    }
    match raw {
        "true" => toml::Value::Boolean(true),
        "false" => toml::Value::Boolean(false),
        _ => toml::Value::String(raw.to_string()),
    }
}

impl ServiceConfig {
    /// Merge defaults, an optional file and the given environment pairs.
    pub fn load(
        file: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, CliError> {
        let mut table = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    CliError::Validation(format!("cannot read config {}: {e}", path.display()))
                })?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?
            }
            None => toml::Table::new(),
        };
        for (k, v) in env {
            let Some(key) = k.strip_prefix(ENV_PREFIX).map(str::to_ascii_lowercase) else {
                continue;
            };
            if KEYS.contains(&key.as_str()) {
                let value = if Self::string_key(&key) {
                    toml::Value::String(v)
                } else {
                    env_value(&v)
                };
                table.insert(key, value);
            }
        }
        // integral values are accepted for float settings
        for (key, value) in table.iter_mut() {
            if let (true, toml::Value::Integer(i)) = (Self::float_key(key), &*value) {
                *value = toml::Value::Float(*i as f64);
            }
        }
        let cfg: ServiceConfig = table.try_into().map_err(|e: toml::de::Error| {
            CliError::Validation(format!("config: {}", e.message()))
        })?;
        Ok(cfg)
    }

    fn float_key(key: &str) -> bool {
        matches!(
            key,
            "theta_route"
                | "theta_seg"
                | "theta_equal"
                | "tau"
                | "epsilon_fraction"
                | "tau_conf"
                | "base_score"
        )
    }

    fn string_key(key: &str) -> bool {
        matches!(
            key,
            "listen"
                | "graph"
                | "mock_script"
                | "chat_base_url"
                | "chat_model"
                | "embed_base_url"
                | "embed_model"
                | "api_key_env"
                | "prompt_dir"
        )
    }

    pub fn retrieval(&self) -> RetrievalConfig {
        RetrievalConfig {
            top_k: self.top_k,
            hop_limit: self.hop_limit,
            focus_cap: self.focus_cap,
            theta_route: self.theta_route,
            min_provenance_hits: self.min_provenance_hits,
            session_rollup: self.session_rollup,
            mode_override: self.mode,
            union_modes: self.union_modes,
            ..RetrievalConfig::default()
        }
    }

    pub fn engine(&self) -> EngineConfig {
        EngineConfig {
            retrieval: self.retrieval(),
            theta_seg: self.theta_seg,
            theta_equal: self.theta_equal,
            tau: self.tau,
            m: self.m,
            insertion_disabled: self.insertion_disabled,
        }
    }

    /// Density settings for `records`; epsilon scales the configured or
    /// mean base score.
    pub fn density(&self, records: &[EvalRecord]) -> Result<DensityConfig, CliError> {
        let base = match self.base_score {
            Some(b) => b,
            None => mean_base_score(records)
                .ok_or_else(|| CliError::Validation("no evaluation records".into()))?,
        };
        if !(0.0..=1.0).contains(&base) {
            return Err(CliError::Validation(format!(
                "base_score {base} outside [0, 1]"
            )));
        }
        Ok(DensityConfig::from_fraction(
            self.epsilon_fraction,
            base,
            self.tau_conf,
        )?)
    }

    fn network_settings(&self) -> Vec<&'static str> {
        [
            ("chat_base_url", self.chat_base_url.is_some()),
            ("chat_model", self.chat_model.is_some()),
            ("embed_base_url", self.embed_base_url.is_some()),
            ("embed_model", self.embed_model.is_some()),
        ]
        .into_iter()
        .filter_map(|(k, set)| set.then_some(k))
        .collect()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.engine().validate()?;
        if !(self.epsilon_fraction >= 0.0 && self.epsilon_fraction.is_finite()) {
            return Err(CliError::Validation(format!(
                "epsilon_fraction {} must be >= 0",
                self.epsilon_fraction
            )));
        }
        if !(self.tau_conf > 0.0 && self.tau_conf <= 1.0) {
            return Err(CliError::Validation(format!(
                "tau_conf {} outside (0, 1]",
                self.tau_conf
            )));
        }
        if self.embedding_dim == 0 {
            return Err(CliError::Validation(
                "embedding_dim must be positive".into(),
            ));
        }
        if self.stats_sample == 0 {
            return Err(CliError::Validation("stats_sample must be positive".into()));
        }
        if self.timeout_secs == 0 {
            return Err(CliError::Validation("timeout_secs must be positive".into()));
        }
        let network = self.network_settings();
        if self.mock_providers && !network.is_empty() {
            return Err(CliError::Validation(format!(
                "mock providers cannot be combined with network settings ({})",
                network.join(", ")
            )));
        }
        if self.mock_script.is_some() && !self.mock_providers {
            return Err(CliError::Validation(
                "mock_script requires mock_providers".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn file_then_env() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kgmem.toml");
        std::fs::write(
            &path,
            "top_k = 5\ntau = 1\nmode = \"semantic\"\nlisten = \"0.0.0.0:9000\"\n",
        )
        .unwrap();
        let cfg = ServiceConfig::load(
            Some(&path),
            env(&[
                ("KGMEM_TOP_K", "7"),
                ("KGMEM_TAU_CONF", "1"),
                ("KGMEM_LISTEN", "1234"),
                ("OTHER", "x"),
            ]),
        )
        .unwrap();
        assert_eq!(cfg.top_k, 7);
        assert_eq!(cfg.tau, 1.0);
        assert_eq!(cfg.tau_conf, 1.0);
        assert_eq!(cfg.listen, "1234");
        assert_eq!(cfg.mode, Some(MemoryMode::Semantic));
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_file_key_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "top_kk = 5\n").unwrap();
        assert!(matches!(
            ServiceConfig::load(Some(&path), []),
            Err(CliError::Validation(_))
        ));
    }

    #[test]
    fn mock_excludes_network() {
        let cfg = ServiceConfig {
            mock_providers: true,
            chat_base_url: Some("http://x".into()),
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ServiceConfig {
            focus_cap: 20,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn density_defaults_to_mean_base() {
        let rec = |b: f64| EvalRecord {
            id: "r".into(),
            p_base: b,
            p_mem: 1.0,
            memory_tokens: 10,
            base_dist: None,
            mem_dist: None,
            astar_index: None,
            budget: None,
        };
        let cfg = ServiceConfig::default()
            .density(&[rec(0.2), rec(0.6)])
            .unwrap();
        assert!((cfg.epsilon - 0.004).abs() < 1e-15);
    }
}
