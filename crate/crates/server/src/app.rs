//! HTTP routes over a shared [`AppState`].
//!
//! Bodies are read as raw bytes and decoded here so malformed JSON gets the
//! same structured error body as every other failure.

use std::collections::{BTreeMap, VecDeque};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use kgmem_core::evaluator::{
    argmax_density, argmax_utility, group_by_budget, summarize, sweep_csv, utility_cost_sweep,
    EvalRecord, EvalSummary,
};
use kgmem_core::graph::{MemoryGraph, NodeKind};
use kgmem_core::maintenance::{graph_stats, GraphStats};
use kgmem_core::pipeline::{DeleteCriteria, GraphStore, MemoryEngine, MemoryResponse};
use kgmem_core::retriever::{HopRecord, MemoryMode, RetrievalContext, RetrievalResult};
use kgmem_core::standardizer::RawTrajectory;
use parking_lot::Mutex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::ServiceConfig;
use crate::error::{ApiError, CliError};

/// Hop traces kept for `/debug/hop-trace`.
const TRACE_CAPACITY: usize = 1024;

pub struct AppState {
    pub config: ServiceConfig,
    pub engine: MemoryEngine,
    pub store: GraphStore,
    pub evals: Mutex<Vec<EvalRecord>>,
    traces: Mutex<VecDeque<(String, TraceEntry)>>,
    next_request: AtomicU64,
    persist_lock: Mutex<()>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub request_id: String,
    pub query: String,
    pub mode: MemoryMode,
    pub hops_used: usize,
    pub stopped_early: bool,
    pub hop_trace: Vec<HopRecord>,
}

impl AppState {
    pub fn new(config: ServiceConfig, engine: MemoryEngine, graph: MemoryGraph) -> Self {
        Self {
            config,
            engine,
            store: GraphStore::new(graph),
            evals: Mutex::new(Vec::new()),
            traces: Mutex::new(VecDeque::new()),
            next_request: AtomicU64::new(1),
            persist_lock: Mutex::new(()),
        }
    }

    pub fn graph_dir(&self) -> Option<&PathBuf> {
        self.config.graph.as_ref()
    }

    /// Write the current graph to the snapshot directory, if one is set.
    pub fn persist(&self) -> Result<(), CliError> {
        let Some(dir) = self.graph_dir() else {
            return Ok(());
        };
        let _guard = self.persist_lock.lock();
        self.store
            .snapshot()
            .save(dir)
            .map_err(|e| CliError::Runtime(format!("saving graph to {}: {e}", dir.display())))
    }

    fn record_trace(&self, entry: TraceEntry) {
        let mut traces = self.traces.lock();
        if traces.len() == TRACE_CAPACITY {
            traces.pop_front();
        }
        traces.push_back((entry.request_id.clone(), entry));
    }

    pub fn trace(&self, id: &str) -> Option<TraceEntry> {
        self.traces
            .lock()
            .iter()
            .find(|(k, _)| k == id)
            .map(|(_, t)| t.clone())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrieveRequest {
    pub query: String,
    pub mode: Option<MemoryMode>,
    pub top_k: Option<usize>,
    pub hop_limit: Option<usize>,
    pub focus_cap: Option<usize>,
    pub min_provenance_hits: Option<usize>,
    pub session_rollup: Option<bool>,
    pub union_modes: Option<bool>,
    pub context: RetrievalContext,
    pub current_date: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrieveResponse {
    pub request_id: String,
    #[serde(flatten)]
    pub memory: MemoryResponse,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UpdateRequest {
    pub tau: Option<f64>,
    pub m: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsResponse {
    pub nodes: usize,
    pub edges: usize,
    pub active_nodes: BTreeMap<NodeKind, usize>,
    pub graph: GraphStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalIngestResponse {
    pub accepted: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalParams {
    pub tau_conf: Option<f64>,
    pub epsilon_fraction: Option<f64>,
    pub base_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryResponse {
    #[serde(flatten)]
    pub summary: EvalSummary,
    pub argmax_utility_budget: Option<u64>,
    pub argmax_density_budget: Option<u64>,
    pub warnings: Vec<String>,
}

pub fn stats(graph: &MemoryGraph, cfg: &ServiceConfig) -> Result<StatsResponse, CliError> {
    let mut active_nodes = BTreeMap::new();
    for kind in NodeKind::ALL {
        active_nodes.insert(kind, graph.active_nodes(kind).count());
    }
    Ok(StatsResponse {
        nodes: graph.node_count(),
        edges: graph.edge_count(),
        active_nodes,
        graph: graph_stats(graph, cfg.stats_sample, cfg.seed)?,
    })
}

/// Records from a JSON array or from JSON lines, without validation.
pub fn decode_records(text: &str) -> Result<Vec<EvalRecord>, String> {
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(text).map_err(|e| format!("records: {e}"));
    }
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("record line {}: {e}", i + 1)))
        .collect()
}

pub fn validate_records(records: &[EvalRecord]) -> Result<(), CliError> {
    for r in records {
        r.validate()
            .map_err(|e| CliError::Validation(format!("record {:?}: {e}", r.id)))?;
    }
    Ok(())
}

pub fn parse_records(text: &str) -> Result<Vec<EvalRecord>, CliError> {
    let records = decode_records(text).map_err(CliError::Validation)?;
    validate_records(&records)?;
    Ok(records)
}

/// Summary plus sweep argmaxes for budgeted records.
pub fn eval_summary(
    records: &[EvalRecord],
    cfg: &ServiceConfig,
) -> Result<SummaryResponse, CliError> {
    let density = cfg.density(records)?;
    let summary = summarize(records, &density)?;
    let (mut utility, mut dens, mut warnings) = (None, None, Vec::new());
    if records.iter().any(|r| r.budget.is_some()) {
        let sweep = utility_cost_sweep(&group_by_budget(records), &density)?;
        utility = argmax_utility(&sweep.points);
        dens = argmax_density(&sweep.points);
        warnings = sweep.warnings;
    }
    Ok(SummaryResponse {
        summary,
        argmax_utility_budget: utility,
        argmax_density_budget: dens,
        warnings,
    })
}

pub fn eval_sweep_csv(records: &[EvalRecord], cfg: &ServiceConfig) -> Result<String, CliError> {
    let density = cfg.density(records)?;
    Ok(sweep_csv(
        &utility_cost_sweep(&group_by_budget(records), &density)?.points,
    ))
}

fn decode<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request("invalid_json", e.to_string()))
}

/// Like [`decode`], but an empty body means all defaults.
fn decode_or_default<T: DeserializeOwned + Default>(body: &Bytes) -> Result<T, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    decode(body)
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

type Shared = State<Arc<AppState>>;

async fn create(State(s): Shared, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let raw: RawTrajectory = decode(&body)?;
    blocking(move || {
        let report = s.store.write(|g| s.engine.create(g, &raw))?;
        s.persist()?;
        Ok(Json(report))
    })
    .await
}

async fn retrieve(State(s): Shared, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let req: RetrieveRequest = decode(&body)?;
    blocking(move || {
        let mut cfg = s.engine.config.retrieval.clone();
        cfg.mode_override = req.mode.or(cfg.mode_override);
        cfg.top_k = req.top_k.unwrap_or(cfg.top_k);
        cfg.hop_limit = req.hop_limit.unwrap_or(cfg.hop_limit);
        cfg.focus_cap = req.focus_cap.unwrap_or(cfg.focus_cap);
        cfg.min_provenance_hits = req.min_provenance_hits.unwrap_or(cfg.min_provenance_hits);
        cfg.session_rollup = req.session_rollup.unwrap_or(cfg.session_rollup);
        cfg.union_modes = req.union_modes.unwrap_or(cfg.union_modes);
        let graph = s.store.snapshot();
        let memory = s.engine.retrieve_and_compress(
            &graph,
            &req.query,
            Some(&cfg),
            &req.context,
            &req.current_date,
        )?;
        let request_id = format!("r{}", s.next_request.fetch_add(1, Ordering::SeqCst));
        let RetrievalResult {
            mode,
            hops_used,
            stopped_early,
            hop_trace,
            ..
        } = memory.retrieval.clone();
        s.record_trace(TraceEntry {
            request_id: request_id.clone(),
            query: req.query,
            mode,
            hops_used,
            stopped_early,
            hop_trace,
        });
        Ok(Json(RetrieveResponse { request_id, memory }))
    })
    .await
}

async fn update(State(s): Shared, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let req: UpdateRequest = decode_or_default(&body)?;
    blocking(move || {
        let report = s.store.write(|g| s.engine.update(g, req.tau, req.m))?;
        s.persist()?;
        Ok(Json(report))
    })
    .await
}

async fn delete(State(s): Shared, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let criteria: DeleteCriteria = decode(&body)?;
    blocking(move || {
        let report = s.store.write(|g| s.engine.delete(g, &criteria))?;
        s.persist()?;
        Ok(Json(report))
    })
    .await
}

async fn get_stats(State(s): Shared) -> Result<impl IntoResponse, ApiError> {
    blocking(move || Ok(Json(stats(&s.store.snapshot(), &s.config)?))).await
}

async fn add_records(State(s): Shared, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let text = std::str::from_utf8(&body)
        .map_err(|e| ApiError::bad_request("invalid_json", e.to_string()))?;
    let records = decode_records(text).map_err(|m| ApiError::bad_request("invalid_json", m))?;
    validate_records(&records)?;
    let mut store = s.evals.lock();
    store.extend(records.iter().cloned());
    Ok(Json(EvalIngestResponse {
        accepted: records.len(),
        total: store.len(),
    }))
}

fn eval_config(
    s: &AppState,
    params: Result<Query<EvalParams>, QueryRejection>,
) -> Result<ServiceConfig, ApiError> {
    let Query(p) = params.map_err(|e| ApiError::bad_request("validation", e.body_text()))?;
    let mut cfg = s.config.clone();
    cfg.tau_conf = p.tau_conf.unwrap_or(cfg.tau_conf);
    cfg.epsilon_fraction = p.epsilon_fraction.unwrap_or(cfg.epsilon_fraction);
    cfg.base_score = p.base_score.or(cfg.base_score);
    Ok(cfg)
}

async fn summary(
    State(s): Shared,
    params: Result<Query<EvalParams>, QueryRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let cfg = eval_config(&s, params)?;
    let records = s.evals.lock().clone();
    Ok(Json(eval_summary(&records, &cfg)?))
}

async fn sweep(
    State(s): Shared,
    params: Result<Query<EvalParams>, QueryRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let cfg = eval_config(&s, params)?;
    let records = s.evals.lock().clone();
    let csv = eval_sweep_csv(&records, &cfg)?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv))
}

async fn healthz(State(s): Shared) -> impl IntoResponse {
    let g = s.store.snapshot();
    Json(serde_json::json!({"status": "ok", "nodes": g.node_count(), "edges": g.edge_count()}))
}

async fn hop_trace(
    State(s): Shared,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    s.trace(&id)
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("no hop trace for request {id:?}")))
}

async fn not_found() -> Response {
    ApiError::not_found("no such endpoint").into_response()
}

async fn method_not_allowed() -> Response {
    ApiError::new(
        StatusCode::METHOD_NOT_ALLOWED,
        "method_not_allowed",
        "method not allowed",
    )
    .into_response()
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/memories", post(create))
        .route("/retrieve", post(retrieve))
        .route("/maintenance/update", post(update))
        .route("/memories/delete", post(delete))
        .route("/stats", get(get_stats))
        .route("/eval/records", post(add_records))
        .route("/eval/summary", get(summary))
        .route("/eval/sweep.csv", get(sweep))
        .route("/healthz", get(healthz))
        .route("/debug/hop-trace/{id}", get(hop_trace))
        .fallback(not_found)
        .method_not_allowed_fallback(method_not_allowed)
        .with_state(state)
}
