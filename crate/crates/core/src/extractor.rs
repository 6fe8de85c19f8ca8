//! Semantic (proposition + tags) and procedural (intent + prescription +
//! return) knowledge extraction, and insertion with provenance.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeKind, GraphError, MemoryGraph, NodeId, NodeKind, META_RETURN};
use crate::provider::{PromptName, Providers};
use crate::standardizer::{EpisodicStep, Segment};
use crate::text::{bracket_list, section, sentence_count};
use crate::vector::cosine;

pub const MAX_FACTS: usize = 10;
pub const MAX_SENTENCES: usize = 4;
pub const DEFAULT_THETA_EQUAL: f64 = 0.9;
/// Prescriptions at or below this return are flagged in meta.
pub const LOW_RETURN: u8 = 3;
pub const META_LOW_RETURN: &str = "low_return";

const FORBIDDEN_TAG: &str = "user";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticExtraction {
    pub proposition: String,
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProceduralExtraction {
    pub intent: String,
    pub prescription: String,
    pub return_score: u8,
}

fn strip_label<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    let l = line.trim();
    // drop a leading list number such as "3."
    let l = match l.find(|c: char| !c.is_ascii_digit()) {
        Some(i) if i > 0 && l[i..].starts_with('.') => l[i + 1..].trim_start(),
        _ => l,
    };
    let l = l.trim_start_matches(['-', '*', ' ']);
    let rest = l.strip_prefix(label)?;
    let rest = rest.strip_prefix(':')?;
    Some(rest.trim_start_matches('*').trim())
}

/// Parse the numbered `**Statement:** / **Tags:**` list in a Facts section.
pub fn parse_facts(body: &str) -> Vec<SemanticExtraction> {
    let mut items: Vec<(String, Option<Vec<String>>)> = Vec::new();
    for line in body.lines() {
        if let Some(stmt) = strip_label(line, "Statement") {
            items.push((stmt.to_string(), None));
        } else if let Some(tags) = strip_label(line, "Tags") {
            if let Some(last) = items.last_mut() {
                last.1 = Some(bracket_list(tags).unwrap_or_default());
            }
        } else if let Some(last) = items.last_mut() {
            // continuation of a multi-line statement
            if last.1.is_none() && !line.trim().is_empty() {
                last.0.push(' ');
                last.0.push_str(line.trim());
            }
        }
    }
    items
        .into_iter()
        .filter_map(|(stmt, tags)| {
            let proposition = stmt.trim().to_string();
            let tags: Vec<String> = tags?
                .into_iter()
                .filter(|t| !t.eq_ignore_ascii_case(FORBIDDEN_TAG))
                .collect();
            (!proposition.is_empty() && !tags.is_empty())
                .then_some(SemanticExtraction { proposition, tags })
        })
        .collect()
}

/// Merge exact duplicate statements (tags unioned in first-seen order), then
/// keep at most [`MAX_FACTS`].
pub fn dedup_and_cap(items: Vec<SemanticExtraction>) -> Vec<SemanticExtraction> {
    let mut out: Vec<SemanticExtraction> = Vec::new();
    for item in items {
        match out.iter_mut().find(|o| o.proposition == item.proposition) {
            Some(existing) => {
                for t in item.tags {
                    if !existing.tags.contains(&t) {
                        existing.tags.push(t);
                    }
                }
            }
            None => out.push(item),
        }
    }
    out.truncate(MAX_FACTS);
    out
}

pub fn extract_semantic(p: &Providers, step: &EpisodicStep) -> Result<Vec<SemanticExtraction>> {
    if step.observation.trim().is_empty() {
        return Err(Error::Validation("step observation is empty".into()));
    }
    let out = p.ask(
        PromptName::GetSemantic,
        &[("observation", &step.observation)],
    )?;
    let body = section(&out, "Facts")
        .ok_or_else(|| Error::parse("missing \"### Facts\" section", out.clone()))?;
    let items = dedup_and_cap(parse_facts(&body));
    for item in &items {
        let n = sentence_count(&item.proposition);
        if n > MAX_SENTENCES {
            tracing::warn!(sentences = n, proposition = %item.proposition, "proposition exceeds sentence limit");
        }
    }
    Ok(items)
}

/// Insert propositions, reuse or create their concepts, and link membership,
/// provenance and sibling edges.
pub fn insert_semantic(
    graph: &mut MemoryGraph,
    p: &Providers,
    extractions: &[SemanticExtraction],
    source: NodeId,
) -> Result<Vec<NodeId>> {
    let src = graph.get(source)?;
    if src.kind != NodeKind::Episodic {
        return Err(GraphError::WrongKind {
            id: source,
            expected: NodeKind::Episodic,
            actual: src.kind,
        }
        .into());
    }
    let mut ids = Vec::with_capacity(extractions.len());
    for ex in extractions {
        let emb = p.embed(&ex.proposition)?;
        let pid = graph.add_node(
            NodeKind::Proposition,
            ex.proposition.clone(),
            &emb,
            BTreeMap::new(),
        )?;
        for tag in &ex.tags {
            let cid = match graph.find_concept(tag) {
                Some(c) => c,
                None => {
                    let cemb = p.embed(tag)?;
                    graph.add_node(NodeKind::Concept, tag.trim(), &cemb, BTreeMap::new())?
                }
            };
            graph.add_edge_idempotent(EdgeKind::Membership, pid, cid)?;
        }
        graph.add_edge(EdgeKind::Provenance, pid, source)?;
        ids.push(pid);
    }
    for (i, a) in ids.iter().enumerate() {
        for b in &ids[i + 1..] {
            graph.link_siblings(*a, *b)?;
        }
    }
    Ok(ids)
}

pub fn extract_procedural(p: &Providers, segment: &Segment) -> Result<(String, String)> {
    if segment.steps.is_empty() {
        return Err(Error::Validation("segment has no steps".into()));
    }
    let trace = segment.linearize();
    let out = p.ask(PromptName::GetProcedural, &[("trajectory", &trace)])?;
    let goal = section(&out, "Goal")
        .ok_or_else(|| Error::parse("missing \"### Goal\" section", out.clone()))?;
    let insight = section(&out, "Experiential Insight")
        .ok_or_else(|| Error::parse("missing \"### Experiential Insight\" section", out.clone()))?;
    Ok((goal, insight))
}

fn first_integer(text: &str) -> Option<i64> {
    let bytes = text.as_bytes();
    let start = bytes.iter().position(|b| b.is_ascii_digit())?;
    let neg = start > 0 && bytes[start - 1] == b'-';
    let end = bytes[start..]
        .iter()
        .position(|b| !b.is_ascii_digit())
        .map_or(bytes.len(), |e| start + e);
    let v: i64 = text[start..end].parse().ok()?;
    Some(if neg { -v } else { v })
}

pub fn score_return(p: &Providers, intent: &str, trace: &str) -> Result<u8> {
    if intent.trim().is_empty() || trace.trim().is_empty() {
        return Err(Error::Validation(
            "return scoring needs an intent and a trace".into(),
        ));
    }
    let out = p.ask(
        PromptName::GetReturn,
        &[("subgoal", intent), ("procedural_memory", trace)],
    )?;
    let body = section(&out, "Score")
        .ok_or_else(|| Error::parse("missing \"### Score\" section", out.clone()))?;
    match first_integer(&body) {
        Some(v) if (1..=10).contains(&v) => Ok(v as u8),
        Some(v) => Err(Error::parse(
            format!("return score {v} outside 1..=10"),
            out,
        )),
        None => Err(Error::parse("no integer in \"### Score\" section", out)),
    }
}

/// Text after the last `Merged goal:` marker.
fn parse_merged_goal(text: &str) -> Option<String> {
    let idx = text.rfind("Merged goal:")?;
    let rest = text[idx + "Merged goal:".len()..].trim();
    let merged = rest.trim_start_matches('[').trim_end_matches(']').trim();
    (!merged.is_empty()).then(|| merged.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum IntentUpsert {
    Created(NodeId),
    Merged(NodeId),
}

impl IntentUpsert {
    pub fn id(self) -> NodeId {
        match self {
            IntentUpsert::Created(id) | IntentUpsert::Merged(id) => id,
        }
    }
}

/// Merge into the most similar active intent when its cosine exceeds
/// `theta_equal`, otherwise create a new intent node. Ties go to the older
/// intent.
pub fn upsert_intent(
    graph: &mut MemoryGraph,
    p: &Providers,
    intent_text: &str,
    theta_equal: f64,
) -> Result<IntentUpsert> {
    let text = intent_text.trim();
    if text.is_empty() {
        return Err(Error::Validation("intent text is empty".into()));
    }
    let emb = p.embed(text)?;
    let mut best: Option<(NodeId, f64)> = None;
    for node in graph.active_nodes(NodeKind::Intent) {
        let c = cosine(&emb, &node.embedding);
        if best.is_none_or(|(_, b)| c > b) {
            best = Some((node.id, c));
        }
    }
    match best {
        Some((id, sim)) if sim > theta_equal => {
            let existing = graph.get(id)?.text.clone();
            let out = p.ask(
                PromptName::GetNewSubgoal,
                &[("goal_1", &existing), ("goal_2", text)],
            )?;
            let merged = parse_merged_goal(&out)
                .ok_or_else(|| Error::parse("missing \"Merged goal:\" line", out.clone()))?;
            let merged_emb = p.embed(&merged)?;
            graph.update_text(id, merged, &merged_emb)?;
            Ok(IntentUpsert::Merged(id))
        }
        _ => Ok(IntentUpsert::Created(graph.add_node(
            NodeKind::Intent,
            text,
            &emb,
            BTreeMap::new(),
        )?)),
    }
}

pub fn insert_procedural(
    graph: &mut MemoryGraph,
    p: &Providers,
    intent_id: NodeId,
    prescription: &str,
    return_score: u8,
    sources: &[NodeId],
) -> Result<NodeId> {
    if !(1..=10).contains(&return_score) {
        return Err(Error::Validation(format!(
            "return score {return_score} outside 1..=10"
        )));
    }
    if prescription.trim().is_empty() {
        return Err(Error::Validation("prescription text is empty".into()));
    }
    let intent = graph.get(intent_id)?;
    if intent.kind != NodeKind::Intent {
        return Err(GraphError::WrongKind {
            id: intent_id,
            expected: NodeKind::Intent,
            actual: intent.kind,
        }
        .into());
    }
    let mut meta = BTreeMap::new();
    meta.insert(META_RETURN.to_string(), return_score.to_string());
    if return_score <= LOW_RETURN {
        meta.insert(META_LOW_RETURN.to_string(), "true".to_string());
    }
    let emb = p.embed(prescription)?;
    let id = graph.add_node(NodeKind::Prescription, prescription.trim(), &emb, meta)?;
    graph.add_edge(EdgeKind::Solves, intent_id, id)?;
    for src in sources {
        graph.add_edge_idempotent(EdgeKind::Provenance, id, *src)?;
    }
    Ok(id)
}
