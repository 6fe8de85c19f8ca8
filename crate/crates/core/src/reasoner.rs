//! Compresses retrieved memory into a short text for the base agent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::provider::{PromptName, Providers, Tokenizer};
use crate::retriever::MemoryMode;
use crate::text::{section, strip_marker};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressedMemory {
    pub text: String,
    pub mode: MemoryMode,
    pub token_count: usize,
    pub source_node_ids: Vec<NodeId>,
}

impl CompressedMemory {
    pub fn empty(mode: MemoryMode) -> Self {
        Self {
            text: String::new(),
            mode,
            token_count: 0,
            source_node_ids: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.text.is_empty()
    }
}

/// "1. first\n2. second"
pub fn numbered(texts: &[&str]) -> String {
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| format!("{}. {}", i + 1, t))
        .collect::<Vec<_>>()
        .join("\n")
}

fn is_null(body: &str) -> bool {
    strip_marker(body)
        .trim_matches(|c: char| {
            c == '"' || c == '\'' || c == '*' || c == '`' || c == '.' || c.is_whitespace()
        })
        .eq_ignore_ascii_case("null")
}

/// Pull the memory text out of a reasoning completion.
pub fn extract(mode: MemoryMode, completion: &str) -> Result<String> {
    let heading = match mode {
        MemoryMode::Episodic => return Ok(completion.trim().to_string()),
        MemoryMode::Semantic => "Information",
        MemoryMode::Procedural => "Final Information",
    };
    let body = section(completion, heading)
        .ok_or_else(|| Error::parse(format!("missing \"### {heading}\" section"), completion))?;
    if is_null(&body) {
        return Ok(String::new());
    }
    Ok(match mode {
        MemoryMode::Semantic if body.starts_with("##") && !body.starts_with("###") => {
            strip_marker(&body).to_string()
        }
        _ => body,
    })
}

/// `items` are `(node id, text)` in candidate-score order. An empty list
/// short-circuits without a provider call.
pub fn compress(
    p: &Providers,
    tokenizer: &dyn Tokenizer,
    mode: MemoryMode,
    query: &str,
    items: &[(NodeId, String)],
    current_date: &str,
) -> Result<CompressedMemory> {
    if items.is_empty() {
        return Ok(CompressedMemory::empty(mode));
    }
    let list = numbered(&items.iter().map(|(_, t)| t.as_str()).collect::<Vec<_>>());
    let out = match mode {
        MemoryMode::Episodic => p.ask(
            PromptName::ReasonEpisodic,
            &[
                ("information", &list),
                ("time", current_date),
                ("question", query),
            ],
        )?,
        MemoryMode::Semantic => p.ask(
            PromptName::ReasonSemantic,
            &[
                ("semantic_memory", &list),
                ("time", current_date),
                ("observation", query),
            ],
        )?,
        MemoryMode::Procedural => p.ask(
            PromptName::ReasonProcedural,
            &[("observation", query), ("procedural_memory", &list)],
        )?,
    };
    let text = extract(mode, &out)?;
    let token_count = tokenizer.count(&text);
    Ok(CompressedMemory {
        source_node_ids: if text.is_empty() {
            Vec::new()
        } else {
            items.iter().map(|(id, _)| *id).collect()
        },
        text,
        mode,
        token_count,
    })
}
