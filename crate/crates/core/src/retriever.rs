//! Multi-hop retrieval that alternates between routing through high-level
//! nodes (concepts, intents) and expanding over low-level nodes
//! (propositions, prescriptions).
//!
//! Each hop asks the controller whether the current candidates suffice. If
//! not, the selected focus facts are appended to the query, an abstract plan
//! (tags and a next subgoal) routes through matching high-level nodes, and the
//! resulting link-channel candidates are unioned with an embedding-channel
//! top-k before reranking back to the budget.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Direction, EdgeKind, MemoryGraph, NodeId, NodeKind, META_TRAJECTORY};
use crate::provider::{PromptName, Providers};
use crate::text::{bracket_list, section, strip_marker};
use crate::vector::cosine;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryMode {
    Episodic,
    Semantic,
    Procedural,
}

impl MemoryMode {
    pub const ALL: [MemoryMode; 3] = [
        MemoryMode::Episodic,
        MemoryMode::Semantic,
        MemoryMode::Procedural,
    ];

    pub fn low_level(self) -> NodeKind {
        match self {
            MemoryMode::Episodic | MemoryMode::Semantic => NodeKind::Proposition,
            MemoryMode::Procedural => NodeKind::Prescription,
        }
    }

    pub fn high_level(self) -> NodeKind {
        match self {
            MemoryMode::Episodic | MemoryMode::Semantic => NodeKind::Concept,
            MemoryMode::Procedural => NodeKind::Intent,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MemoryMode::Episodic => "episodic",
            MemoryMode::Semantic => "semantic",
            MemoryMode::Procedural => "procedural",
        }
    }
}

impl std::str::FromStr for MemoryMode {
    type Err = Error;

    /// Accepts `semantic` or `semantic_memory`, case-insensitively.
    fn from_str(s: &str) -> Result<Self> {
        let v = s.trim().to_ascii_lowercase();
        let v = v.strip_suffix("_memory").unwrap_or(&v);
        MemoryMode::ALL
            .into_iter()
            .find(|m| m.as_str() == v)
            .ok_or_else(|| Error::parse(format!("unknown memory type {s:?}"), s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub top_k: usize,
    pub hop_limit: usize,
    pub focus_cap: usize,
    /// Minimum cosine for routing a plan signal to a high-level node when no
    /// exact text match exists.
    pub theta_route: f64,
    /// Episodic nodes (or sessions) need this many provenance hits.
    pub min_provenance_hits: usize,
    /// Count hits per trajectory instead of per episodic node.
    pub session_rollup: bool,
    /// Importance bonus per return point above 5, prescriptions only.
    pub return_weight: f64,
    pub mode_override: Option<MemoryMode>,
    /// Search propositions and prescriptions together regardless of mode.
    pub union_modes: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            top_k: 10,
            hop_limit: 2,
            focus_cap: 2,
            theta_route: 0.75,
            min_provenance_hits: 2,
            session_rollup: false,
            return_weight: 0.02,
            mode_override: None,
            union_modes: false,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 || self.hop_limit == 0 || self.focus_cap == 0 {
            return Err(Error::Validation(
                "top_k, hop_limit and focus_cap must be positive".into(),
            ));
        }
        if self.focus_cap > self.top_k {
            return Err(Error::Validation(format!(
                "focus_cap {} exceeds top_k {}",
                self.focus_cap, self.top_k
            )));
        }
        if !(-1.0..=1.0).contains(&self.theta_route) {
            return Err(Error::Validation("theta_route must lie in [-1, 1]".into()));
        }
        if self.min_provenance_hits == 0 {
            return Err(Error::Validation(
                "min_provenance_hits must be positive".into(),
            ));
        }
        Ok(())
    }

    fn low_level_kinds(&self, mode: MemoryMode) -> Vec<NodeKind> {
        if self.union_modes {
            vec![NodeKind::Proposition, NodeKind::Prescription]
        } else {
            vec![mode.low_level()]
        }
    }

    fn high_level_kinds(&self, mode: MemoryMode) -> Vec<NodeKind> {
        if self.union_modes {
            vec![NodeKind::Concept, NodeKind::Intent]
        } else {
            vec![mode.high_level()]
        }
    }
}

/// Caller context for mode selection and planning. Missing fields are sent
/// to the planner as `None`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalContext {
    pub task_type: Option<String>,
    pub goal: Option<String>,
    pub subgoal: Option<String>,
    pub state: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub id: NodeId,
    pub score: f64,
}

/// Low-level candidates sorted by score descending, then id ascending.
pub type CandidateSet = Vec<Scored>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlDecision {
    pub enough: bool,
    pub focus_ids: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopRecord {
    pub hop: usize,
    /// Absent when the hop started with no candidates.
    pub control: Option<ControlDecision>,
    pub query: String,
    pub tags: Vec<String>,
    pub next_subgoal: String,
    pub routed_to: Vec<NodeId>,
    pub link_ids: Vec<NodeId>,
    pub embedding_ids: Vec<NodeId>,
    pub candidates: Vec<Scored>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub mode: MemoryMode,
    pub candidates: CandidateSet,
    pub episodic_nodes: Vec<NodeId>,
    pub hops_used: usize,
    pub hop_trace: Vec<HopRecord>,
    pub stopped_early: bool,
}

pub fn select_mode(p: &Providers, task_type: &str, observation: &str) -> Result<MemoryMode> {
    if task_type.trim().is_empty() || observation.trim().is_empty() {
        return Err(Error::Validation(
            "mode selection needs a task description and observation".into(),
        ));
    }
    let out = p.ask(
        PromptName::GetMode,
        &[("task_type", task_type), ("observation", observation)],
    )?;
    let body = section(&out, "Memory Type")
        .ok_or_else(|| Error::parse("missing \"### Memory Type\" section", out.clone()))?;
    let value = body.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    strip_marker(value)
        .trim_matches(|c: char| c == '[' || c == ']' || c == '*' || c == '`')
        .parse()
        .map_err(|_| Error::parse(format!("unrecognized memory type {value:?}"), out))
}

fn sort_scored(v: &mut CandidateSet) {
    v.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
}

fn top_by_embedding(
    graph: &MemoryGraph,
    kinds: &[NodeKind],
    query: &[f64],
    k: usize,
) -> CandidateSet {
    let mut scored: CandidateSet = kinds
        .iter()
        .flat_map(|kind| graph.active_nodes(*kind))
        .map(|n| Scored {
            id: n.id,
            score: cosine(query, &n.embedding),
        })
        .collect();
    sort_scored(&mut scored);
    scored.truncate(k);
    scored
}

/// Cosine of the query against every active low-level node of the mode's
/// kind, best `top_k` kept.
pub fn init_candidates(
    graph: &MemoryGraph,
    p: &Providers,
    query: &str,
    mode: MemoryMode,
    top_k: usize,
) -> Result<CandidateSet> {
    let q = p.embed(query)?;
    Ok(top_by_embedding(graph, &[mode.low_level()], &q, top_k))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstractPlan {
    pub tags: Vec<String>,
    pub next_subgoal: String,
}

impl AbstractPlan {
    /// Signals routed to high-level nodes: tags, plus the subgoal in
    /// procedural retrieval where intents are goal sentences.
    pub fn signals(&self, mode: MemoryMode) -> Vec<String> {
        let mut out = Vec::new();
        if mode == MemoryMode::Procedural && !self.next_subgoal.is_empty() {
            out.push(self.next_subgoal.clone());
        }
        out.extend(self.tags.iter().cloned());
        out
    }

    /// Text embedded as the abstract query.
    pub fn text(&self) -> String {
        let mut parts: Vec<&str> = self.tags.iter().map(String::as_str).collect();
        if !self.next_subgoal.is_empty() {
            parts.push(&self.next_subgoal);
        }
        parts.join(" ")
    }
}

pub fn parse_plan(out: &str) -> Result<AbstractPlan> {
    let body =
        section(out, "Tags").ok_or_else(|| Error::parse("missing \"### Tags\" section", out))?;
    let tags = body
        .lines()
        .find_map(bracket_list)
        .ok_or_else(|| Error::parse("no bracketed tag list in \"### Tags\"", out))?
        .into_iter()
        .filter(|t| !t.eq_ignore_ascii_case("user"))
        .collect();
    let next_subgoal = section(out, "Next Subgoal")
        .map(|b| {
            strip_marker(&b)
                .trim_matches(|c: char| c == '[' || c == ']')
                .trim()
                .to_string()
        })
        .unwrap_or_default();
    Ok(AbstractPlan { tags, next_subgoal })
}

/// Ask the planner for the next-hop tags and subgoal. `observation` is the
/// current (integrated) query; `goal` defaults to the original query.
pub fn plan_abstract(
    p: &Providers,
    goal: &str,
    observation: &str,
    context: &RetrievalContext,
) -> Result<AbstractPlan> {
    if observation.trim().is_empty() {
        return Err(Error::Validation("query is empty".into()));
    }
    let or_none = |v: &Option<String>| {
        v.as_deref()
            .filter(|s| !s.trim().is_empty())
            .unwrap_or("None")
            .to_string()
    };
    let goal = context.goal.clone().unwrap_or_else(|| goal.to_string());
    let out = p.ask(
        PromptName::GetPlan,
        &[
            ("goal", &goal),
            ("subgoal", &or_none(&context.subgoal)),
            ("state", &or_none(&context.state)),
            ("observation", observation),
        ],
    )?;
    parse_plan(&out)
}

/// Best active high-level node for `signal`: exact trimmed text, then
/// case-insensitive text, then highest cosine at or above `theta_route`.
fn route_signal(
    graph: &MemoryGraph,
    p: &Providers,
    signal: &str,
    kinds: &[NodeKind],
    theta_route: f64,
) -> Option<NodeId> {
    let s = signal.trim();
    if s.is_empty() {
        return None;
    }
    let pool = || kinds.iter().flat_map(|k| graph.active_nodes(*k));
    if let Some(n) = pool().find(|n| n.text.trim() == s) {
        return Some(n.id);
    }
    if let Some(n) = pool().find(|n| n.text.trim().eq_ignore_ascii_case(s)) {
        return Some(n.id);
    }
    let q = p.embed(s).ok()?;
    let mut best: Option<(NodeId, f64)> = None;
    for n in pool() {
        let c = cosine(&q, &n.embedding);
        if c >= theta_route && best.is_none_or(|(_, b)| c > b) {
            best = Some((n.id, c));
        }
    }
    best.map(|(id, _)| id)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Expansion {
    pub routed_to: Vec<NodeId>,
    pub low_level: BTreeSet<NodeId>,
}

/// Route each signal to a high-level node and collect its active low-level
/// neighbors (membership for concepts, solves for intents).
pub fn expand(
    graph: &MemoryGraph,
    p: &Providers,
    signals: &[String],
    mode: MemoryMode,
    config: &RetrievalConfig,
) -> Result<Expansion> {
    let kinds = config.high_level_kinds(mode);
    let mut out = Expansion::default();
    for s in signals {
        let Some(hl) = route_signal(graph, p, s, &kinds, config.theta_route) else {
            continue;
        };
        if !out.routed_to.contains(&hl) {
            out.routed_to.push(hl);
        }
        let lows = match graph.get(hl)?.kind {
            NodeKind::Concept => graph.neighbors(hl, EdgeKind::Membership, Direction::Incoming)?,
            _ => graph.neighbors(hl, EdgeKind::Solves, Direction::Outgoing)?,
        };
        out.low_level.extend(lows);
    }
    Ok(out)
}

/// Score = best cosine against any of `queries`, plus
/// `return_weight * (return - 5)` for prescriptions. Inactive and
/// high-level ids are dropped.
pub fn rerank_prune(
    graph: &MemoryGraph,
    ids: impl IntoIterator<Item = NodeId>,
    queries: &[Vec<f64>],
    top_k: usize,
    return_weight: f64,
) -> CandidateSet {
    let unique: BTreeSet<NodeId> = ids.into_iter().collect();
    let mut out: CandidateSet = unique
        .into_iter()
        .filter_map(|id| graph.node(id))
        .filter(|n| n.active && n.kind.is_low_level())
        .map(|n| {
            let relevance = queries
                .iter()
                .map(|q| cosine(q, &n.embedding))
                .fold(f64::NEG_INFINITY, f64::max);
            let relevance = if relevance.is_finite() {
                relevance
            } else {
                0.0
            };
            let bonus = match (n.kind, n.return_score()) {
                (NodeKind::Prescription, Some(r)) => return_weight * (f64::from(r) - 5.0),
                _ => 0.0,
            };
            Scored {
                id: n.id,
                score: relevance + bonus,
            }
        })
        .collect();
    sort_scored(&mut out);
    out.truncate(top_k);
    out
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ControlReply {
    enough: bool,
    top_node_ids: Vec<u64>,
}

/// Validate a controller reply against the available ids and the focus cap.
pub fn parse_control(out: &str, available: &[NodeId], focus_cap: usize) -> Result<ControlDecision> {
    let reply: ControlReply = serde_json::from_str(out.trim())
        .map_err(|e| Error::parse(format!("controller reply is not strict JSON: {e}"), out))?;
    let mut ids: Vec<NodeId> = Vec::new();
    for id in reply.top_node_ids.into_iter().map(NodeId) {
        if !ids.contains(&id) {
            ids.push(id);
        }
    }
    if reply.enough && !ids.is_empty() {
        return Err(Error::Validation(
            "controller violated \"if enough=true => top_node_ids=[]\"".into(),
        ));
    }
    if ids.len() > focus_cap {
        return Err(Error::Validation(format!(
            "controller violated \"top_node_ids length <= {focus_cap}\" ({} ids)",
            ids.len()
        )));
    }
    if let Some(bad) = ids.iter().find(|id| !available.contains(id)) {
        return Err(Error::Validation(format!(
            "controller violated \"top_node_ids must be a subset of available ids\" (id {bad})"
        )));
    }
    Ok(ControlDecision {
        enough: reply.enough,
        focus_ids: ids,
    })
}

pub fn control(
    graph: &MemoryGraph,
    p: &Providers,
    question: &str,
    candidates: &CandidateSet,
    focus_cap: usize,
) -> Result<ControlDecision> {
    if candidates.is_empty() {
        return Ok(ControlDecision {
            enough: false,
            focus_ids: Vec::new(),
        });
    }
    let available: Vec<NodeId> = candidates.iter().map(|c| c.id).collect();
    let ids_json = format!(
        "[{}]",
        available
            .iter()
            .map(|i| i.0.to_string())
            .collect::<Vec<_>>()
            .join(", ")
    );
    let facts = candidates
        .iter()
        .map(|c| Ok(format!("[{}] {}", c.id, graph.get(c.id)?.text)))
        .collect::<Result<Vec<_>>>()?
        .join("\n");
    let out = p.ask(
        PromptName::MultiHopCtrl,
        &[
            ("n_facts_new_query", &focus_cap.to_string()),
            ("question", question),
            ("available_ids", &ids_json),
            ("semantic_memory_str", &facts),
        ],
    )?;
    parse_control(&out, &available, focus_cap)
}

pub fn integrate_query(query: &str, focus_texts: &[String]) -> String {
    let mut out = query.to_string();
    for f in focus_texts {
        out.push_str("\nKnown: ");
        out.push_str(f);
    }
    out
}

/// Map candidates to episodic nodes through provenance and keep those with
/// at least `min_hits` supporting candidates. With `session_rollup`, hits
/// are pooled per trajectory and every episodic node of a qualifying
/// trajectory is returned.
pub fn to_episodic(
    graph: &MemoryGraph,
    candidates: &CandidateSet,
    min_hits: usize,
    session_rollup: bool,
) -> Result<Vec<NodeId>> {
    let mut hits: BTreeMap<NodeId, usize> = BTreeMap::new();
    for c in candidates {
        for e in graph.provenance(c.id)? {
            if graph.is_active(e) {
                *hits.entry(e).or_default() += 1;
            }
        }
    }
    if !session_rollup {
        let mut out: Vec<(NodeId, usize)> =
            hits.into_iter().filter(|(_, h)| *h >= min_hits).collect();
        out.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        return Ok(out.into_iter().map(|(id, _)| id).collect());
    }
    let session_of = |id: NodeId| -> String {
        graph
            .node(id)
            .and_then(|n| n.meta.get(META_TRAJECTORY).cloned())
            .unwrap_or_else(|| format!("node-{id}"))
    };
    let mut per_session: BTreeMap<String, usize> = BTreeMap::new();
    for (id, h) in &hits {
        *per_session.entry(session_of(*id)).or_default() += h;
    }
    let mut sessions: Vec<(String, usize)> = per_session
        .into_iter()
        .filter(|(_, h)| *h >= min_hits)
        .collect();
    sessions.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut out = Vec::new();
    for (s, _) in sessions {
        let mut members: Vec<NodeId> = graph
            .active_nodes(NodeKind::Episodic)
            .filter(|n| session_of(n.id) == s)
            .map(|n| n.id)
            .collect();
        members.sort();
        out.extend(members);
    }
    Ok(out)
}

fn check_candidates(graph: &MemoryGraph, c: &CandidateSet, top_k: usize) {
    debug_assert!(c.len() <= top_k);
    debug_assert!(c.iter().all(|s| graph
        .node(s.id)
        .is_some_and(|n| n.active && n.kind.is_low_level())));
}

pub fn retrieve(
    graph: &MemoryGraph,
    p: &Providers,
    query: &str,
    config: &RetrievalConfig,
    context: &RetrievalContext,
) -> Result<RetrievalResult> {
    config.validate()?;
    if query.trim().is_empty() {
        return Err(Error::Validation("query is empty".into()));
    }
    let mode = match config.mode_override {
        Some(m) => m,
        None => {
            let task = context
                .task_type
                .as_deref()
                .filter(|t| !t.trim().is_empty())
                .unwrap_or(query);
            select_mode(p, task, query)?
        }
    };
    let kinds = config.low_level_kinds(mode);
    let q0 = p.embed(query)?;
    let mut candidates = rerank_prune(
        graph,
        top_by_embedding(graph, &kinds, &q0, config.top_k)
            .into_iter()
            .map(|s| s.id),
        std::slice::from_ref(&q0),
        config.top_k,
        config.return_weight,
    );
    check_candidates(graph, &candidates, config.top_k);

    let mut trace = Vec::new();
    let mut current = query.to_string();
    let mut stopped_early = false;
    let mut hops_used = 0;
    for hop in 1..=config.hop_limit {
        hops_used = hop;
        let record = (|| -> Result<Option<HopRecord>> {
            let decision = if candidates.is_empty() {
                None
            } else {
                Some(control(graph, p, query, &candidates, config.focus_cap)?)
            };
            if let Some(d) = &decision {
                if d.enough {
                    return Ok(Some(HopRecord {
                        hop,
                        control: decision.clone(),
                        query: current.clone(),
                        tags: Vec::new(),
                        next_subgoal: String::new(),
                        routed_to: Vec::new(),
                        link_ids: Vec::new(),
                        embedding_ids: Vec::new(),
                        candidates: candidates.clone(),
                    }));
                }
                let focus = d
                    .focus_ids
                    .iter()
                    .map(|id| Ok(graph.get(*id)?.text.clone()))
                    .collect::<Result<Vec<_>>>()?;
                current = integrate_query(&current, &focus);
            }
            let plan = plan_abstract(p, query, &current, context)?;
            let expansion = expand(graph, p, &plan.signals(mode), mode, config)?;
            let qt = p.embed(&current)?;
            let embedding_ids: Vec<NodeId> = top_by_embedding(graph, &kinds, &qt, config.top_k)
                .into_iter()
                .map(|s| s.id)
                .collect();
            let mut queries = vec![qt];
            let abstract_text = plan.text();
            if !abstract_text.trim().is_empty() {
                if let Ok(qa) = p.embed(&abstract_text) {
                    queries.push(qa);
                }
            }
            let pool = candidates
                .iter()
                .map(|c| c.id)
                .chain(expansion.low_level.iter().copied())
                .chain(embedding_ids.iter().copied());
            candidates = rerank_prune(graph, pool, &queries, config.top_k, config.return_weight);
            check_candidates(graph, &candidates, config.top_k);
            Ok(Some(HopRecord {
                hop,
                control: decision,
                query: current.clone(),
                tags: plan.tags,
                next_subgoal: plan.next_subgoal,
                routed_to: expansion.routed_to,
                link_ids: expansion.low_level.into_iter().collect(),
                embedding_ids,
                candidates: candidates.clone(),
            }))
        })()
        .map_err(|e| e.at_hop(hop))?;
        if let Some(r) = record {
            let enough = r.control.as_ref().is_some_and(|d| d.enough);
            trace.push(r);
            if enough {
                stopped_early = true;
                break;
            }
        }
    }

    let episodic_nodes = if mode == MemoryMode::Episodic {
        to_episodic(
            graph,
            &candidates,
            config.min_provenance_hits,
            config.session_rollup,
        )?
    } else {
        Vec::new()
    };
    Ok(RetrievalResult {
        mode,
        candidates,
        episodic_nodes,
        hops_used,
        hop_trace: trace,
        stopped_early,
    })
}
