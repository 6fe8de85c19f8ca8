//! The create / retrieve / update / delete surface over one memory graph.
//!
//! [`MemoryEngine`] holds providers and defaults; [`GraphStore`] owns the
//! graph and gives readers a consistent snapshot while a single writer
//! prepares the next version.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::extractor::{
    extract_procedural, extract_semantic, insert_procedural, insert_semantic, score_return,
    upsert_intent, IntentUpsert, DEFAULT_THETA_EQUAL,
};
use crate::graph::{EdgeKind, MemoryGraph, NodeId, NodeKind, META_TRAJECTORY};
use crate::maintenance::{update_pass, UpdateReport, DEFAULT_M, DEFAULT_TAU};
use crate::provider::{Providers, Tokenizer, WhitespaceTokenizer};
use crate::reasoner::{compress, CompressedMemory};
use crate::retriever::{retrieve, MemoryMode, RetrievalConfig, RetrievalContext, RetrievalResult};
use crate::standardizer::{segment, standardize_trajectory, RawTrajectory, DEFAULT_THETA_SEG};

pub const META_STEP: &str = "step";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub retrieval: RetrievalConfig,
    pub theta_seg: f64,
    pub theta_equal: f64,
    pub tau: f64,
    pub m: usize,
    /// Reject create and update; retrieval only.
    pub insertion_disabled: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            retrieval: RetrievalConfig::default(),
            theta_seg: DEFAULT_THETA_SEG,
            theta_equal: DEFAULT_THETA_EQUAL,
            tau: DEFAULT_TAU,
            m: DEFAULT_M,
            insertion_disabled: false,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        self.retrieval.validate()?;
        for (name, v) in [
            ("theta_seg", self.theta_seg),
            ("theta_equal", self.theta_equal),
            ("tau", self.tau),
        ] {
            if !(-1.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!("{name} {v} outside [-1, 1]")));
            }
        }
        if self.m == 0 {
            return Err(Error::Validation("m must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub trajectory_id: String,
    pub steps: usize,
    pub segments: usize,
    pub intents_merged: usize,
    pub nodes_created: BTreeMap<NodeKind, usize>,
    pub edges_created: BTreeMap<EdgeKind, usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub retrieve_ms: f64,
    pub compress_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryResponse {
    pub compressed: CompressedMemory,
    pub retrieval: RetrievalResult,
    pub timing: Timing,
}

impl MemoryResponse {
    /// Serialization without timing, stable across identical runs.
    pub fn canonical_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("response serializes");
        if let Some(o) = v.as_object_mut() {
            o.remove("timing");
        }
        serde_json::to_string_pretty(&v).expect("value serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DeleteCriteria {
    Ids {
        ids: Vec<NodeId>,
    },
    Predicate {
        kind: NodeKind,
        /// Prescriptions only: match return scores at or below this value.
        #[serde(default)]
        max_return: Option<u8>,
        #[serde(default)]
        text_contains: Option<String>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DeleteReport {
    pub deactivated: usize,
    pub unknown_ids: Vec<NodeId>,
}

fn count_by_kind(graph: &MemoryGraph) -> (BTreeMap<NodeKind, usize>, BTreeMap<EdgeKind, usize>) {
    let mut nodes = BTreeMap::new();
    for n in graph.nodes() {
        *nodes.entry(n.kind).or_default() += 1;
    }
    let mut edges = BTreeMap::new();
    for e in graph.edges() {
        *edges.entry(e.kind).or_default() += 1;
    }
    (nodes, edges)
}

fn diff<K: Ord + Copy>(
    before: &BTreeMap<K, usize>,
    after: &BTreeMap<K, usize>,
) -> BTreeMap<K, usize> {
    after
        .iter()
        .map(|(k, v)| (*k, v - before.get(k).copied().unwrap_or(0)))
        .filter(|(_, v)| *v > 0)
        .collect()
}

/// Text handed to the reasoner for a candidate; prescriptions carry their
/// return score inline.
pub fn reasoner_text(graph: &MemoryGraph, id: NodeId) -> Result<String> {
    let n = graph.get(id)?;
    Ok(match (n.kind, n.return_score()) {
        (NodeKind::Prescription, Some(r)) => format!("{} (return: {r}/10)", n.text),
        _ => n.text.clone(),
    })
}

/// SHA-256 over the serialized nodes and edges.
pub fn graph_digest(graph: &MemoryGraph) -> String {
    let mut h = Sha256::new();
    let mut nodes: Vec<_> = graph.nodes().collect();
    nodes.sort_by_key(|n| n.id);
    for n in nodes {
        h.update(serde_json::to_vec(n).expect("node serializes"));
    }
    let mut edges: Vec<_> = graph.edges().collect();
    edges.sort_by_key(|e| e.id);
    for e in edges {
        h.update(serde_json::to_vec(e).expect("edge serializes"));
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone)]
pub struct MemoryEngine {
    pub providers: Providers,
    pub tokenizer: Arc<dyn Tokenizer>,
    pub config: EngineConfig,
}

impl MemoryEngine {
    pub fn new(providers: Providers, config: EngineConfig) -> Self {
        Self {
            providers,
            tokenizer: Arc::new(WhitespaceTokenizer),
            config,
        }
    }

    pub fn with_tokenizer(mut self, tokenizer: Arc<dyn Tokenizer>) -> Self {
        self.tokenizer = tokenizer;
        self
    }

    /// Standardize, store and abstract one trajectory. All writes happen in
    /// one transaction: on any error the graph is left untouched.
    pub fn create(&self, graph: &mut MemoryGraph, raw: &RawTrajectory) -> Result<IngestReport> {
        if self.config.insertion_disabled {
            return Err(Error::InsertionDisabled);
        }
        raw.validate()?;
        let p = &self.providers;
        let steps = standardize_trajectory(p, raw).map_err(|e| e.in_stage("standardize"))?;
        let (nodes_before, edges_before) = count_by_kind(graph);
        graph.transaction(|g| {
            let mut report = IngestReport {
                steps: steps.len(),
                ..Default::default()
            };
            let mut episodic = Vec::with_capacity(steps.len());
            for step in &steps {
                let text = step.render();
                let emb = p.embed(&text).map_err(|e| e.in_stage("episodic"))?;
                let id = g.add_node(NodeKind::Episodic, text, &emb, BTreeMap::new())?;
                episodic.push(id);
            }
            let trajectory_id = raw
                .id
                .clone()
                .unwrap_or_else(|| format!("traj-{}", episodic[0]));
            for (step, id) in steps.iter().zip(&episodic) {
                g.set_meta(*id, META_TRAJECTORY, trajectory_id.clone())?;
                g.set_meta(*id, META_STEP, step.index.to_string())?;
            }
            for (step, id) in steps.iter().zip(&episodic) {
                let facts = extract_semantic(p, step)
                    .map_err(|e| e.at_step(step.index).in_stage("extract_semantic"))?;
                insert_semantic(g, p, &facts, *id)
                    .map_err(|e| e.at_step(step.index).in_stage("insert_semantic"))?;
            }
            if !raw.is_passive() {
                let segments = segment(&trajectory_id, &steps, self.config.theta_seg)
                    .map_err(|e| e.in_stage("segment"))?;
                report.segments = segments.len();
                for seg in &segments {
                    let (intent, prescription) =
                        extract_procedural(p, seg).map_err(|e| e.in_stage("extract_procedural"))?;
                    let score = score_return(p, &intent, &seg.linearize())
                        .map_err(|e| e.in_stage("score_return"))?;
                    let upsert = upsert_intent(g, p, &intent, self.config.theta_equal)
                        .map_err(|e| e.in_stage("upsert_intent"))?;
                    if matches!(upsert, IntentUpsert::Merged(_)) {
                        report.intents_merged += 1;
                    }
                    let sources: Vec<NodeId> =
                        seg.steps.iter().map(|s| episodic[s.index - 1]).collect();
                    insert_procedural(g, p, upsert.id(), &prescription, score, &sources)
                        .map_err(|e| e.in_stage("insert_procedural"))?;
                }
            }
            let (nodes_after, edges_after) = count_by_kind(g);
            report.trajectory_id = trajectory_id;
            report.nodes_created = diff(&nodes_before, &nodes_after);
            report.edges_created = diff(&edges_before, &edges_after);
            Ok(report)
        })
    }

    /// Retrieve with `config` (the engine default when `None`) and compress
    /// the result. Never writes to the graph.
    pub fn retrieve_and_compress(
        &self,
        graph: &MemoryGraph,
        query: &str,
        config: Option<&RetrievalConfig>,
        context: &RetrievalContext,
        current_date: &str,
    ) -> Result<MemoryResponse> {
        let config = config.unwrap_or(&self.config.retrieval);
        let t0 = Instant::now();
        let retrieval = retrieve(graph, &self.providers, query, config, context)
            .map_err(|e| e.in_stage("retrieve"))?;
        let retrieve_ms = t0.elapsed().as_secs_f64() * 1e3;
        let ids: Vec<NodeId> = if retrieval.mode == MemoryMode::Episodic {
            retrieval.episodic_nodes.clone()
        } else {
            retrieval.candidates.iter().map(|c| c.id).collect()
        };
        let items = ids
            .into_iter()
            .map(|id| Ok((id, reasoner_text(graph, id)?)))
            .collect::<Result<Vec<_>>>()?;
        let t1 = Instant::now();
        let compressed = compress(
            &self.providers,
            self.tokenizer.as_ref(),
            retrieval.mode,
            query,
            &items,
            current_date,
        )
        .map_err(|e| e.in_stage("reason"))?;
        Ok(MemoryResponse {
            compressed,
            retrieval,
            timing: Timing {
                retrieve_ms,
                compress_ms: t1.elapsed().as_secs_f64() * 1e3,
            },
        })
    }

    pub fn update(
        &self,
        graph: &mut MemoryGraph,
        tau: Option<f64>,
        m: Option<usize>,
    ) -> Result<UpdateReport> {
        if self.config.insertion_disabled {
            return Err(Error::InsertionDisabled);
        }
        update_pass(
            graph,
            &self.providers,
            tau.unwrap_or(self.config.tau),
            m.unwrap_or(self.config.m),
        )
        .map_err(|e| e.in_stage("update"))
    }

    pub fn delete(
        &self,
        graph: &mut MemoryGraph,
        criteria: &DeleteCriteria,
    ) -> Result<DeleteReport> {
        let mut report = DeleteReport::default();
        let targets: Vec<NodeId> = match criteria {
            DeleteCriteria::Ids { ids } => {
                let mut out = Vec::new();
                for id in ids {
                    match graph.node(*id) {
                        None => report.unknown_ids.push(*id),
                        Some(n) if n.active && !out.contains(id) => out.push(*id),
                        Some(_) => {}
                    }
                }
                out
            }
            DeleteCriteria::Predicate {
                kind,
                max_return,
                text_contains,
            } => {
                if max_return.is_some() && *kind != NodeKind::Prescription {
                    return Err(Error::Validation(
                        "max_return applies to Prescription nodes only".into(),
                    ));
                }
                graph
                    .active_nodes(*kind)
                    .filter(|n| match max_return {
                        Some(max) => n.return_score().is_some_and(|r| r <= *max),
                        None => true,
                    })
                    .filter(|n| text_contains.as_deref().is_none_or(|t| n.text.contains(t)))
                    .map(|n| n.id)
                    .collect()
            }
        };
        for id in &targets {
            graph.deactivate(*id)?;
        }
        report.deactivated = targets.len();
        Ok(report)
    }
}

/// Snapshot-isolated holder: readers clone an `Arc` of the current graph,
/// writers serialize on a mutex, mutate a private copy and swap it in.
pub struct GraphStore {
    current: RwLock<Arc<MemoryGraph>>,
    writer: Mutex<()>,
}

impl GraphStore {
    pub fn new(graph: MemoryGraph) -> Self {
        Self {
            current: RwLock::new(Arc::new(graph)),
            writer: Mutex::new(()),
        }
    }

    pub fn snapshot(&self) -> Arc<MemoryGraph> {
        self.current.read().clone()
    }

    /// Apply `f` to a copy; the copy replaces the graph only on success.
    pub fn write<T>(&self, f: impl FnOnce(&mut MemoryGraph) -> Result<T>) -> Result<T> {
        let _guard = self.writer.lock();
        let mut next = (*self.snapshot()).clone();
        let out = f(&mut next)?;
        *self.current.write() = Arc::new(next);
        Ok(out)
    }
}
