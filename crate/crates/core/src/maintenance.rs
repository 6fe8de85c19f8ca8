//! Merge pass over the semantic subgraph and graph-quality statistics.

use std::collections::{BTreeMap, BTreeSet};

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Direction, EdgeKind, MemoryGraph, NodeId, NodeKind};
use crate::provider::{PromptName, Providers};

pub const DEFAULT_TAU: f64 = 0.7;
pub const DEFAULT_M: usize = 1;
pub const DEFAULT_STATS_SEED: u64 = 42;
pub const META_MERGED_FROM: &str = "merged_from";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Relationship {
    UpdateSameFact,
    SameTopicMergeWell,
    WeakRelatedStitchRisk,
}

impl Relationship {
    pub const ALL: [Relationship; 3] = [
        Relationship::UpdateSameFact,
        Relationship::SameTopicMergeWell,
        Relationship::WeakRelatedStitchRisk,
    ];

    /// Cases A and B supersede both originals; case C keeps them.
    pub fn deactivates(self) -> bool {
        self != Relationship::WeakRelatedStitchRisk
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergeOutcome {
    pub merged_statement: String,
    pub relationship: Relationship,
    pub deactivate_earlier: bool,
    pub deactivate_later: bool,
    pub simple_reasoning: String,
}

/// Cases A/B need both flags true, case C both false.
pub fn validate_flags(relationship: Relationship, earlier: bool, later: bool) -> Result<()> {
    let want = relationship.deactivates();
    if earlier != want || later != want {
        return Err(Error::Validation(format!(
            "{relationship:?} requires deactivate_earlier={want} and deactivate_later={want}, got {earlier}/{later}"
        )));
    }
    Ok(())
}

impl MergeOutcome {
    pub fn parse(raw: &str) -> Result<Self> {
        let out: MergeOutcome = serde_json::from_str(raw.trim())
            .map_err(|e| Error::parse(format!("merge reply is not valid JSON: {e}"), raw))?;
        validate_flags(
            out.relationship,
            out.deactivate_earlier,
            out.deactivate_later,
        )?;
        if out.relationship.deactivates() && out.merged_statement.trim().is_empty() {
            return Err(Error::Validation("merged_statement is empty".into()));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeResult {
    pub outcome: MergeOutcome,
    pub merged_node: Option<NodeId>,
    pub siblings_transferred: usize,
}

/// Fanout candidates with cosine strictly above `tau`, best first (ties by
/// lower id), at most `m`.
pub fn merge_candidates(
    graph: &MemoryGraph,
    id: NodeId,
    tau: f64,
    m: usize,
) -> Result<Vec<(NodeId, f64)>> {
    if m == 0 {
        return Err(Error::Validation("m must be positive".into()));
    }
    let mut out: Vec<(NodeId, f64)> = graph
        .candidate_fanout(id)?
        .into_iter()
        .map(|c| Ok((c, graph.similarity(id, c)?)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|(_, s)| *s > tau)
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out.truncate(m);
    Ok(out)
}

fn active_targets(
    graph: &MemoryGraph,
    ids: [NodeId; 2],
    kind: EdgeKind,
) -> Result<BTreeSet<NodeId>> {
    let mut out = BTreeSet::new();
    for id in ids {
        out.extend(graph.neighbors(id, kind, Direction::Outgoing)?);
    }
    for id in ids {
        out.remove(&id);
    }
    Ok(out)
}

/// Ask the LLM to adjudicate two propositions and apply the outcome. Nothing
/// is written unless the reply parses and satisfies the case constraints.
pub fn merge(graph: &mut MemoryGraph, p: &Providers, a: NodeId, b: NodeId) -> Result<MergeResult> {
    if a == b {
        return Err(Error::Validation("cannot merge a node with itself".into()));
    }
    for id in [a, b] {
        let n = graph.get(id)?;
        if n.kind != NodeKind::Proposition {
            return Err(Error::Validation(format!(
                "node {id} is a {:?}, not a Proposition",
                n.kind
            )));
        }
        if !n.active {
            return Err(crate::graph::GraphError::Inactive(id).into());
        }
    }
    let (earlier, later) = {
        let (na, nb) = (graph.get(a)?, graph.get(b)?);
        if (na.created_at, na.id) <= (nb.created_at, nb.id) {
            (a, b)
        } else {
            (b, a)
        }
    };
    let out = p.ask(
        PromptName::MergeSemantic,
        &[
            ("memory_earlier", &graph.get(earlier)?.text),
            ("memory_later", &graph.get(later)?.text),
        ],
    )?;
    let outcome = MergeOutcome::parse(&out)?;
    if !outcome.relationship.deactivates() {
        return Ok(MergeResult {
            outcome,
            merged_node: None,
            siblings_transferred: 0,
        });
    }
    let embedding = p.embed(&outcome.merged_statement)?;
    graph.transaction(|g| {
        let pair = [earlier, later];
        let concepts = active_targets(g, pair, EdgeKind::Membership)?;
        let sources = active_targets(g, pair, EdgeKind::Provenance)?;
        let siblings = active_targets(g, pair, EdgeKind::Sibling)?;
        let mut meta = BTreeMap::new();
        meta.insert(META_MERGED_FROM.to_string(), format!("{earlier},{later}"));
        let new = g.add_node(
            NodeKind::Proposition,
            outcome.merged_statement.clone(),
            &embedding,
            meta,
        )?;
        for c in &concepts {
            g.add_edge(EdgeKind::Membership, new, *c)?;
        }
        for e in &sources {
            g.add_edge(EdgeKind::Provenance, new, *e)?;
        }
        for s in &siblings {
            g.link_siblings(new, *s)?;
        }
        g.deactivate(earlier)?;
        g.deactivate(later)?;
        Ok(MergeResult {
            outcome: outcome.clone(),
            merged_node: Some(new),
            siblings_transferred: siblings.len(),
        })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeFailure {
    pub node: NodeId,
    pub candidate: NodeId,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub nodes_visited: usize,
    pub merges_triggered: usize,
    pub merges_applied: usize,
    pub siblings_transferred: usize,
    pub errors: Vec<MergeFailure>,
}

/// One pass over the propositions active at the start, oldest first. A node
/// with at least one candidate counts as triggered; candidates are tried in
/// order until a merge supersedes the node.
pub fn update_pass(
    graph: &mut MemoryGraph,
    p: &Providers,
    tau: f64,
    m: usize,
) -> Result<UpdateReport> {
    if m == 0 {
        return Err(Error::Validation("m must be positive".into()));
    }
    if !(-1.0..=1.0).contains(&tau) {
        return Err(Error::Validation(format!("tau {tau} outside [-1, 1]")));
    }
    let mut order: Vec<(u64, NodeId)> = graph
        .active_nodes(NodeKind::Proposition)
        .map(|n| (n.created_at, n.id))
        .collect();
    order.sort();
    let mut report = UpdateReport::default();
    for (_, id) in order {
        if !graph.is_active(id) {
            continue;
        }
        report.nodes_visited += 1;
        let candidates = merge_candidates(graph, id, tau, m)?;
        if candidates.is_empty() {
            continue;
        }
        report.merges_triggered += 1;
        for (candidate, _) in candidates {
            if !graph.is_active(candidate) {
                continue;
            }
            match merge(graph, p, id, candidate) {
                Ok(r) if r.merged_node.is_some() => {
                    report.merges_applied += 1;
                    report.siblings_transferred += r.siblings_transferred;
                    break;
                }
                Ok(_) => {}
                Err(e) => {
                    tracing::warn!(node = %id, %candidate, error = %e, "merge failed");
                    report.errors.push(MergeFailure {
                        node: id,
                        candidate,
                        message: e.to_string(),
                    });
                }
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub active_semantic_nodes: usize,
    pub used_tags: usize,
    pub bipartite_edges: usize,
    pub pair_bound: u64,
    pub fanout_mean: f64,
    pub fanout_median: f64,
    pub fanout_sample: usize,
}

pub fn choose2(n: u64) -> u64 {
    n * n.saturating_sub(1) / 2
}

/// Counts over active nodes. Fanout is measured on a seeded sample of at
/// most `sample_size` active propositions.
pub fn graph_stats(graph: &MemoryGraph, sample_size: usize, seed: u64) -> Result<GraphStats> {
    if sample_size == 0 {
        return Err(Error::Validation(
            "fanout sample size must be at least 1".into(),
        ));
    }
    let mut props: Vec<NodeId> = graph
        .active_nodes(NodeKind::Proposition)
        .map(|n| n.id)
        .collect();
    props.sort();
    let mut degree: BTreeMap<NodeId, u64> = BTreeMap::new();
    let mut bipartite_edges = 0;
    for e in graph.edges() {
        if e.kind == EdgeKind::Membership && graph.is_active(e.from) {
            bipartite_edges += 1;
            *degree.entry(e.to).or_default() += 1;
        }
    }
    let pair_bound = degree.values().map(|d| choose2(*d)).sum();
    let mut rng = StdRng::seed_from_u64(seed);
    let sample: Vec<NodeId> = props
        .choose_multiple(&mut rng, sample_size)
        .copied()
        .collect();
    let mut sizes = sample
        .iter()
        .map(|id| Ok(graph.candidate_fanout(*id)?.len() as f64))
        .collect::<Result<Vec<_>>>()?;
    sizes.sort_by(f64::total_cmp);
    Ok(GraphStats {
        active_semantic_nodes: props.len(),
        used_tags: degree.len(),
        bipartite_edges,
        pair_bound,
        fanout_mean: mean(&sizes),
        fanout_median: median(&sizes),
        fanout_sample: sizes.len(),
    })
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Median of a sorted slice; 0 when empty.
fn median(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        n if n % 2 == 1 => v[n / 2],
        n => (v[n / 2 - 1] + v[n / 2]) / 2.0,
    }
}

/// Relative change in percent, rounded to one decimal. `None` when `before` is 0.
pub fn percent_change(before: f64, after: f64) -> Option<f64> {
    if before == 0.0 {
        return None;
    }
    Some(((after - before) / before * 1000.0).round() / 10.0)
}
