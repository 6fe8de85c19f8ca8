//! Typed property graph holding the episodic, semantic and procedural subgraphs.
//!
//! Nodes carry a cached L2-normalized embedding and a soft-delete flag. Edges
//! are directed and typed; each [`EdgeKind`] only connects specific node kinds.
//! Deactivation never removes edges, so provenance stays auditable.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::vector::{cosine, l2_normalize};

pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_EMBEDDING_DIM: usize = 64;

/// Meta key holding a prescription's return score.
pub const META_RETURN: &str = "return";
/// Meta key holding an episodic node's trajectory id.
pub const META_TRAJECTORY: &str = "trajectory_id";

const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("embedding has zero or non-finite norm")]
    ZeroEmbedding,
    #[error("node {0} not found")]
    NodeNotFound(NodeId),
    #[error("node {0} is inactive")]
    Inactive(NodeId),
    #[error("{kind:?} edge cannot connect {from:?} -> {to:?}")]
    EdgeKinds {
        kind: EdgeKind,
        from: NodeKind,
        to: NodeKind,
    },
    #[error("node {id} has kind {actual:?}, expected {expected:?}")]
    WrongKind {
        id: NodeId,
        expected: NodeKind,
        actual: NodeKind,
    },
    #[error("duplicate {kind:?} edge {from} -> {to}")]
    DuplicateEdge {
        kind: EdgeKind,
        from: NodeId,
        to: NodeId,
    },
    #[error("validation: {0}")]
    Validation(String),
    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type GraphResult<T> = Result<T, GraphError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    Episodic,
    Proposition,
    Concept,
    Intent,
    Prescription,
}

impl NodeKind {
    pub const ALL: [NodeKind; 5] = [
        NodeKind::Episodic,
        NodeKind::Proposition,
        NodeKind::Concept,
        NodeKind::Intent,
        NodeKind::Prescription,
    ];

    /// Routing nodes: never retained as retrieval candidates.
    pub fn is_high_level(self) -> bool {
        matches!(self, NodeKind::Concept | NodeKind::Intent)
    }

    pub fn is_low_level(self) -> bool {
        matches!(self, NodeKind::Proposition | NodeKind::Prescription)
    }

    pub fn is_source(self) -> bool {
        self == NodeKind::Episodic
    }
}

impl FromStr for NodeKind {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NodeKind::ALL
            .into_iter()
            .find(|k| format!("{k:?}").eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| GraphError::Validation(format!("unknown node kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeKind {
    Membership,
    Provenance,
    Sibling,
    Solves,
}

impl EdgeKind {
    pub const ALL: [EdgeKind; 4] = [
        EdgeKind::Membership,
        EdgeKind::Provenance,
        EdgeKind::Sibling,
        EdgeKind::Solves,
    ];

    pub fn allows(self, from: NodeKind, to: NodeKind) -> bool {
        use NodeKind::*;
        match self {
            EdgeKind::Membership => from == Proposition && to == Concept,
            EdgeKind::Provenance => matches!(from, Proposition | Prescription) && to == Episodic,
            EdgeKind::Sibling => from == Proposition && to == Proposition,
            EdgeKind::Solves => from == Intent && to == Prescription,
        }
    }
}

/// Engine-assigned identifier. Serialized as a decimal string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeId(pub u64);

macro_rules! string_id {
    ($t:ident) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }

        impl FromStr for $t {
            type Err = std::num::ParseIntError;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                s.trim().parse().map($t)
            }
        }

        impl Serialize for $t {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(&self.0)
            }
        }

        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                #[derive(Deserialize)]
                #[serde(untagged)]
                enum Raw {
                    Num(u64),
                    Str(String),
                }
                match Raw::deserialize(d)? {
                    Raw::Num(n) => Ok($t(n)),
                    Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
                }
            }
        }
    };
}

string_id!(NodeId);
string_id!(EdgeId);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryNode {
    pub id: NodeId,
    pub kind: NodeKind,
    pub text: String,
    pub active: bool,
    pub created_at: u64,
    pub meta: BTreeMap<String, String>,
    pub embedding: Vec<f64>,
}

impl MemoryNode {
    pub fn return_score(&self) -> Option<u8> {
        self.meta
            .get(META_RETURN)
            .and_then(|r| parse_return(r).ok())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEdge {
    pub id: EdgeId,
    pub kind: EdgeKind,
    pub from: NodeId,
    pub to: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Incoming,
    Outgoing,
    Both,
}

/// Parse a return score; valid scores are integers in `1..=10`.
pub fn parse_return(raw: &str) -> GraphResult<u8> {
    let v: i64 = raw
        .trim()
        .parse()
        .map_err(|_| GraphError::Validation(format!("return {raw:?} is not an integer")))?;
    if !(1..=10).contains(&v) {
        return Err(GraphError::Validation(format!("return {v} outside 1..=10")));
    }
    Ok(v as u8)
}

/// Whitespace-trimmed exact text; the key used to deduplicate concepts.
pub fn normalize_label(text: &str) -> String {
    text.trim().to_string()
}

#[derive(Debug, Clone)]
pub struct MemoryGraph {
    dim: usize,
    next_id: u64,
    nodes: BTreeMap<NodeId, MemoryNode>,
    edges: BTreeMap<EdgeId, MemoryEdge>,
    outgoing: HashMap<NodeId, Vec<EdgeId>>,
    incoming: HashMap<NodeId, Vec<EdgeId>>,
    triples: HashMap<(EdgeKind, NodeId, NodeId), EdgeId>,
    labels: HashMap<(NodeKind, String), NodeId>,
}

impl PartialEq for MemoryGraph {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.next_id == other.next_id
            && self.nodes == other.nodes
            && self.edges == other.edges
    }
}

impl Default for MemoryGraph {
    fn default() -> Self {
        Self::new(DEFAULT_EMBEDDING_DIM)
    }
}

impl MemoryGraph {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            next_id: 1,
            nodes: BTreeMap::new(),
            edges: BTreeMap::new(),
            outgoing: HashMap::new(),
            incoming: HashMap::new(),
            triples: HashMap::new(),
            labels: HashMap::new(),
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.dim
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node(&self, id: NodeId) -> Option<&MemoryNode> {
        self.nodes.get(&id)
    }

    pub fn get(&self, id: NodeId) -> GraphResult<&MemoryNode> {
        self.nodes.get(&id).ok_or(GraphError::NodeNotFound(id))
    }

    pub fn edge(&self, id: EdgeId) -> Option<&MemoryEdge> {
        self.edges.get(&id)
    }

    /// All nodes in id (= creation) order.
    pub fn nodes(&self) -> impl Iterator<Item = &MemoryNode> {
        self.nodes.values()
    }

    pub fn edges(&self) -> impl Iterator<Item = &MemoryEdge> {
        self.edges.values()
    }

    pub fn active_nodes(&self, kind: NodeKind) -> impl Iterator<Item = &MemoryNode> {
        self.nodes
            .values()
            .filter(move |n| n.active && n.kind == kind)
    }

    pub fn is_active(&self, id: NodeId) -> bool {
        self.nodes.get(&id).is_some_and(|n| n.active)
    }

    fn alloc(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    fn check_embedding(&self, embedding: &[f64]) -> GraphResult<Vec<f64>> {
        if embedding.len() != self.dim {
            return Err(GraphError::Dimension {
                expected: self.dim,
                actual: embedding.len(),
            });
        }
        l2_normalize(embedding).ok_or(GraphError::ZeroEmbedding)
    }

    pub fn add_node(
        &mut self,
        kind: NodeKind,
        text: impl Into<String>,
        embedding: &[f64],
        meta: BTreeMap<String, String>,
    ) -> GraphResult<NodeId> {
        let embedding = self.check_embedding(embedding)?;
        if kind == NodeKind::Prescription {
            let raw = meta.get(META_RETURN).ok_or_else(|| {
                GraphError::Validation("prescription requires meta \"return\"".into())
            })?;
            parse_return(raw)?;
        }
        let text = text.into();
        let raw = self.alloc();
        let id = NodeId(raw);
        self.nodes.insert(
            id,
            MemoryNode {
                id,
                kind,
                text,
                active: true,
                created_at: raw,
                meta,
                embedding,
            },
        );
        self.register_label(id);
        Ok(id)
    }

    fn register_label(&mut self, id: NodeId) {
        let node = &self.nodes[&id];
        if node.kind != NodeKind::Concept {
            return;
        }
        let key = (node.kind, normalize_label(&node.text));
        let replace = match self.labels.get(&key) {
            Some(existing) => !self.is_active(*existing),
            None => true,
        };
        if replace {
            self.labels.insert(key, id);
        }
    }

    /// Active concept whose trimmed text equals `label` exactly.
    pub fn find_concept(&self, label: &str) -> Option<NodeId> {
        self.labels
            .get(&(NodeKind::Concept, normalize_label(label)))
            .copied()
            .filter(|id| self.is_active(*id))
    }

    pub fn add_edge(&mut self, kind: EdgeKind, from: NodeId, to: NodeId) -> GraphResult<EdgeId> {
        self.insert_edge(kind, from, to, false)
    }

    /// Like [`add_edge`](Self::add_edge) but returns the existing id for a duplicate triple.
    pub fn add_edge_idempotent(
        &mut self,
        kind: EdgeKind,
        from: NodeId,
        to: NodeId,
    ) -> GraphResult<EdgeId> {
        self.insert_edge(kind, from, to, true)
    }

    fn insert_edge(
        &mut self,
        kind: EdgeKind,
        from: NodeId,
        to: NodeId,
        idempotent: bool,
    ) -> GraphResult<EdgeId> {
        let (fk, tk) = {
            let f = self.get(from)?;
            let t = self.get(to)?;
            if !f.active {
                return Err(GraphError::Inactive(from));
            }
            if !t.active {
                return Err(GraphError::Inactive(to));
            }
            (f.kind, t.kind)
        };
        if !kind.allows(fk, tk) || (kind == EdgeKind::Sibling && from == to) {
            return Err(GraphError::EdgeKinds {
                kind,
                from: fk,
                to: tk,
            });
        }
        if let Some(existing) = self.triples.get(&(kind, from, to)) {
            return if idempotent {
                Ok(*existing)
            } else {
                Err(GraphError::DuplicateEdge { kind, from, to })
            };
        }
        let id = EdgeId(self.alloc());
        self.index_edge(MemoryEdge { id, kind, from, to });
        Ok(id)
    }

    fn index_edge(&mut self, edge: MemoryEdge) {
        self.outgoing.entry(edge.from).or_default().push(edge.id);
        self.incoming.entry(edge.to).or_default().push(edge.id);
        self.triples
            .insert((edge.kind, edge.from, edge.to), edge.id);
        self.edges.insert(edge.id, edge);
    }

    /// Store a sibling relation as two directed edges. Existing halves are reused.
    pub fn link_siblings(&mut self, a: NodeId, b: NodeId) -> GraphResult<()> {
        self.add_edge_idempotent(EdgeKind::Sibling, a, b)?;
        self.add_edge_idempotent(EdgeKind::Sibling, b, a)?;
        Ok(())
    }

    /// Soft delete. Idempotent; edges are retained.
    pub fn deactivate(&mut self, id: NodeId) -> GraphResult<()> {
        let node = self
            .nodes
            .get_mut(&id)
            .ok_or(GraphError::NodeNotFound(id))?;
        node.active = false;
        Ok(())
    }

    pub fn set_meta(&mut self, id: NodeId, key: &str, value: String) -> GraphResult<()> {
        if key == META_RETURN {
            parse_return(&value)?;
        }
        let node = self
            .nodes
            .get_mut(&id)
            .ok_or(GraphError::NodeNotFound(id))?;
        node.meta.insert(key.to_string(), value);
        Ok(())
    }

    /// Rewrite a node's payload and refresh its embedding.
    pub fn update_text(&mut self, id: NodeId, text: String, embedding: &[f64]) -> GraphResult<()> {
        let embedding = self.check_embedding(embedding)?;
        let node = self
            .nodes
            .get_mut(&id)
            .ok_or(GraphError::NodeNotFound(id))?;
        node.text = text;
        node.embedding = embedding;
        Ok(())
    }

    /// Edges touching `id` with the given kind and direction, including those
    /// whose other endpoint is inactive.
    pub fn edges_of(
        &self,
        id: NodeId,
        kind: EdgeKind,
        direction: Direction,
    ) -> GraphResult<Vec<&MemoryEdge>> {
        self.get(id)?;
        let mut out = Vec::new();
        if matches!(direction, Direction::Outgoing | Direction::Both) {
            for eid in self.outgoing.get(&id).into_iter().flatten() {
                let e = &self.edges[eid];
                if e.kind == kind {
                    out.push(e);
                }
            }
        }
        if matches!(direction, Direction::Incoming | Direction::Both) {
            for eid in self.incoming.get(&id).into_iter().flatten() {
                let e = &self.edges[eid];
                if e.kind == kind {
                    out.push(e);
                }
            }
        }
        Ok(out)
    }

    /// Active endpoints of matching edges, ordered by `created_at` then id.
    pub fn neighbors(
        &self,
        id: NodeId,
        kind: EdgeKind,
        direction: Direction,
    ) -> GraphResult<Vec<NodeId>> {
        let mut ids: Vec<NodeId> = self
            .edges_of(id, kind, direction)?
            .into_iter()
            .map(|e| if e.from == id { e.to } else { e.from })
            .filter(|n| self.is_active(*n))
            .collect();
        ids.sort_by_key(|n| (self.nodes[n].created_at, *n));
        ids.dedup();
        Ok(ids)
    }

    fn expect_kind(&self, id: NodeId, kind: NodeKind) -> GraphResult<&MemoryNode> {
        let node = self.get(id)?;
        if node.kind != kind {
            return Err(GraphError::WrongKind {
                id,
                expected: kind,
                actual: node.kind,
            });
        }
        Ok(node)
    }

    /// Propositions sharing at least one concept with `id`, excluding `id`.
    pub fn candidate_fanout(&self, id: NodeId) -> GraphResult<Vec<NodeId>> {
        let node = self.expect_kind(id, NodeKind::Proposition)?;
        if !node.active {
            return Err(GraphError::Inactive(id));
        }
        let mut seen = HashSet::new();
        for concept in self.neighbors(id, EdgeKind::Membership, Direction::Outgoing)? {
            for p in self.neighbors(concept, EdgeKind::Membership, Direction::Incoming)? {
                if p != id {
                    seen.insert(p);
                }
            }
        }
        let mut out: Vec<NodeId> = seen.into_iter().collect();
        out.sort();
        Ok(out)
    }

    pub fn similarity(&self, a: NodeId, b: NodeId) -> GraphResult<f64> {
        Ok(cosine(&self.get(a)?.embedding, &self.get(b)?.embedding))
    }

    /// Episodic nodes reachable from `id` over Provenance edges.
    pub fn provenance(&self, id: NodeId) -> GraphResult<Vec<NodeId>> {
        let mut out: Vec<NodeId> = self
            .edges_of(id, EdgeKind::Provenance, Direction::Outgoing)?
            .into_iter()
            .map(|e| e.to)
            .collect();
        out.sort();
        out.dedup();
        Ok(out)
    }

    /// Run `f` against a staged copy; the graph is replaced only when `f` succeeds.
    pub fn transaction<T, E>(
        &mut self,
        f: impl FnOnce(&mut MemoryGraph) -> Result<T, E>,
    ) -> Result<T, E> {
        let mut staged = self.clone();
        let out = f(&mut staged)?;
        *self = staged;
        Ok(out)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> GraphResult<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let meta = SnapshotMeta {
            format_version: FORMAT_VERSION,
            embedding_dim: self.dim,
            next_id: self.next_id,
        };
        write_atomic(
            &dir.join("meta.json"),
            serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n",
        )?;
        let mut nodes = String::new();
        for n in self.nodes.values() {
            nodes.push_str(&serde_json::to_string(n).expect("node serializes"));
            nodes.push('\n');
        }
        write_atomic(&dir.join("nodes.jsonl"), nodes)?;
        let mut edges = String::new();
        for e in self.edges.values() {
            edges.push_str(&serde_json::to_string(e).expect("edge serializes"));
            edges.push('\n');
        }
        write_atomic(&dir.join("edges.jsonl"), edges)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> GraphResult<MemoryGraph> {
        Self::load_inner(dir.as_ref(), None)
    }

    /// Load and require the snapshot's embedding dimension to equal `dim`.
    pub fn load_with_dim(dir: impl AsRef<Path>, dim: usize) -> GraphResult<MemoryGraph> {
        Self::load_inner(dir.as_ref(), Some(dim))
    }

    fn load_inner(dir: &Path, expected_dim: Option<usize>) -> GraphResult<MemoryGraph> {
        let meta_raw = fs::read_to_string(dir.join("meta.json"))?;
        let meta: SnapshotMeta =
            serde_json::from_str(&meta_raw).map_err(|e| GraphError::Parse {
                file: "meta.json".into(),
                line: e.line(),
                message: e.to_string(),
            })?;
        if meta.format_version != FORMAT_VERSION {
            return Err(GraphError::Parse {
                file: "meta.json".into(),
                line: 1,
                message: format!("unsupported format_version {}", meta.format_version),
            });
        }
        if let Some(dim) = expected_dim {
            if dim != meta.embedding_dim {
                return Err(GraphError::Dimension {
                    expected: dim,
                    actual: meta.embedding_dim,
                });
            }
        }
        let mut graph = MemoryGraph::new(meta.embedding_dim);
        let mut max_id = 0u64;

        let nodes_raw = fs::read_to_string(dir.join("nodes.jsonl"))?;
        for (line_no, line) in jsonl_lines(&nodes_raw) {
            let parse_err = |message: String| GraphError::Parse {
                file: "nodes.jsonl".into(),
                line: line_no,
                message,
            };
            let node: MemoryNode =
                serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
            if node.embedding.len() != graph.dim {
                return Err(GraphError::Dimension {
                    expected: graph.dim,
                    actual: node.embedding.len(),
                });
            }
            let norm = node.embedding.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(parse_err(format!("embedding norm {norm} is not unit")));
            }
            if node.kind == NodeKind::Prescription {
                let raw = node
                    .meta
                    .get(META_RETURN)
                    .ok_or_else(|| parse_err("prescription without return".into()))?;
                parse_return(raw).map_err(|e| parse_err(e.to_string()))?;
            }
            if graph.nodes.contains_key(&node.id) {
                return Err(parse_err(format!("duplicate node id {}", node.id)));
            }
            max_id = max_id.max(node.id.0);
            let id = node.id;
            graph.nodes.insert(id, node);
            graph.register_label(id);
        }

        let edges_raw = fs::read_to_string(dir.join("edges.jsonl"))?;
        for (line_no, line) in jsonl_lines(&edges_raw) {
            let parse_err = |message: String| GraphError::Parse {
                file: "edges.jsonl".into(),
                line: line_no,
                message,
            };
            let edge: MemoryEdge =
                serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
            let (Some(f), Some(t)) = (graph.nodes.get(&edge.from), graph.nodes.get(&edge.to))
            else {
                return Err(parse_err(format!(
                    "edge {} has a missing endpoint",
                    edge.id
                )));
            };
            if !edge.kind.allows(f.kind, t.kind) {
                return Err(parse_err(format!(
                    "{:?} edge cannot connect {:?} -> {:?}",
                    edge.kind, f.kind, t.kind
                )));
            }
            if graph.edges.contains_key(&edge.id)
                || graph.nodes.contains_key(&NodeId(edge.id.0))
                || graph.triples.contains_key(&(edge.kind, edge.from, edge.to))
            {
                return Err(parse_err(format!("duplicate edge {}", edge.id)));
            }
            max_id = max_id.max(edge.id.0);
            graph.index_edge(edge);
        }

        if meta.next_id <= max_id {
            return Err(GraphError::Parse {
                file: "meta.json".into(),
                line: 1,
                message: format!("next_id {} not above max id {max_id}", meta.next_id),
            });
        }
        graph.next_id = meta.next_id;
        Ok(graph)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SnapshotMeta {
    format_version: u32,
    embedding_dim: usize,
    next_id: u64,
}

fn jsonl_lines(raw: &str) -> impl Iterator<Item = (usize, &str)> {
    raw.split('\n')
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

fn write_atomic(path: &Path, contents: String) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)
}
