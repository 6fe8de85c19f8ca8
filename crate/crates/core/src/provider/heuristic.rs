//! Offline chat backend that recognizes which template a prompt came from
//! and answers with a deterministic, well-formed completion built from the
//! prompt's own inputs. Used by `--mock-providers` and as the fallback
//! behind scripted rules.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde_json::json;

use super::prompts::unrender;
use super::{ChatProvider, ChatRequest, Completion, PromptName, PromptSet, ProviderError};

#[derive(Clone)]
pub struct TemplateChat {
    prompts: Arc<PromptSet>,
}

impl Default for TemplateChat {
    fn default() -> Self {
        Self::new(Arc::new(PromptSet::builtin()))
    }
}

fn words(text: &str, n: usize) -> String {
    text.split_whitespace()
        .take(n)
        .collect::<Vec<_>>()
        .join(" ")
}

fn clean(word: &str) -> &str {
    word.trim_matches(|c: char| !c.is_alphanumeric())
}

/// Runs of capitalized words ("Jim Croce"), in first-seen order. Falls
/// back to the longest word when the text has no capitalized run.
pub fn entity_tags(text: &str) -> Vec<String> {
    let mut tags: Vec<String> = Vec::new();
    let mut run: Vec<&str> = Vec::new();
    let flush = |run: &mut Vec<&str>, tags: &mut Vec<String>| {
        if !run.is_empty() {
            let t = run.join(" ");
            if !tags.contains(&t) && !t.eq_ignore_ascii_case("user") && t != "I" {
                tags.push(t);
            }
            run.clear();
        }
    };
    for raw in text.split_whitespace() {
        let w = clean(raw);
        let capital = w
            .chars()
            .next()
            .is_some_and(|c| c.is_uppercase() || c.is_ascii_digit());
        if capital && !w.is_empty() {
            run.push(w);
        } else {
            flush(&mut run, &mut tags);
        }
        if raw.ends_with([',', '.', ';', ':', '?', '!']) {
            flush(&mut run, &mut tags);
        }
    }
    flush(&mut run, &mut tags);
    if tags.is_empty() {
        if let Some(w) = text.split_whitespace().map(clean).max_by_key(|w| w.len()) {
            if !w.is_empty() {
                tags.push(w.to_lowercase());
            }
        }
    }
    tags
}

fn sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for w in text.split_whitespace() {
        if !cur.is_empty() {
            cur.push(' ');
        }
        cur.push_str(w);
        if w.ends_with(['.', '!', '?']) {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.trim().is_empty() {
        out.push(cur);
    }
    out
}

fn strip_number(line: &str) -> &str {
    let l = line.trim();
    match l.find(". ") {
        Some(i) if i > 0 && l[..i].bytes().all(|b| b.is_ascii_digit()) => &l[i + 2..],
        _ => l,
    }
}

fn content_words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| clean(w).to_lowercase())
        .filter(|w| w.len() > 3)
        .collect()
}

impl TemplateChat {
    pub fn new(prompts: Arc<PromptSet>) -> Self {
        Self { prompts }
    }

    /// Which template produced `prompt`, with its recovered inputs.
    pub fn identify(&self, prompt: &str) -> Option<(PromptName, BTreeMap<String, String>)> {
        PromptName::ALL
            .into_iter()
            .find_map(|n| unrender(self.prompts.template(n), prompt).map(|v| (n, v)))
    }

    pub fn respond(&self, prompt: &str) -> Option<String> {
        let (name, v) = self.identify(prompt)?;
        let get = |k: &str| v.get(k).map(String::as_str).unwrap_or("");
        Some(match name {
            PromptName::GetState => format!(
                "### Reasoning\nSummarize the observation.\n### State\n{}",
                words(get("observation"), 24)
            ),
            PromptName::GetSubgoal => {
                let basis = if get("action").trim().is_empty() {
                    get("observation")
                } else {
                    get("action")
                };
                format!(
                    "### Reasoning\nThe action names the subgoal.\n### Subgoal\n{}",
                    words(basis, 8)
                )
            }
            PromptName::GetReward => {
                let next = get("observation");
                if next.trim().is_empty() {
                    "### Reasoning\nNo further observation.\n### Reward\nThe trajectory ended after this action.".to_string()
                } else {
                    format!(
                        "### Reasoning\nCompare observations.\n### Reward\nThe action led to: {}",
                        words(next, 12)
                    )
                }
            }
            PromptName::GetSemantic => {
                let mut body = String::new();
                for (i, s) in sentences(get("observation")).iter().take(10).enumerate() {
                    let tags = entity_tags(s);
                    body.push_str(&format!(
                        "{}. **Statement:** {}\n   **Tags:** {}\n",
                        i + 1,
                        s,
                        serde_json::to_string(&tags).expect("tags serialize")
                    ));
                }
                format!("### Facts\n{body}")
            }
            PromptName::GetProcedural => {
                let trace = get("trajectory");
                let actions: Vec<String> = trace
                    .lines()
                    .filter_map(|l| l.split("action=").nth(1))
                    .map(|a| a.split(';').next().unwrap_or("").trim().to_string())
                    .filter(|a| !a.is_empty())
                    .collect();
                let goal = actions
                    .first()
                    .map(|a| words(a, 8))
                    .unwrap_or_else(|| words(trace, 8));
                format!(
                    "### Reasoning\nThe actions share one purpose.\n### Goal\n{goal}\n### Experiential Insight\n{}",
                    actions
                        .iter()
                        .enumerate()
                        .map(|(i, a)| format!("{}. {a}", i + 1))
                        .collect::<Vec<_>>()
                        .join("\n")
                )
            }
            PromptName::GetReturn => {
                "### Reasoning\nThe process completed.\n### Score\n7".to_string()
            }
            PromptName::GetNewSubgoal => format!("Merged goal: {}", get("goal_2").trim()),
            PromptName::GetMode => {
                let t = get("task_type").to_lowercase();
                let mode = if ["web", "navigat", "procedur", "click", "how to"]
                    .iter()
                    .any(|k| t.contains(k))
                {
                    "procedural_memory"
                } else if ["chat", "conversation", "history", "session"]
                    .iter()
                    .any(|k| t.contains(k))
                {
                    "episodic_memory"
                } else {
                    "semantic_memory"
                };
                format!("### Reasoning\nKeyword match on the task.\n### Memory Type\n## {mode}")
            }
            PromptName::GetPlan => {
                let obs = get("observation");
                let first = obs.lines().next().unwrap_or(obs);
                let tags = entity_tags(first);
                format!(
                    "### Reasoning\nEntities in the question.\n### Tags\n**Tags:** {}\n### Next Subgoal\n## Answer: {}",
                    serde_json::to_string(&tags).expect("tags serialize"),
                    words(first, 12)
                )
            }
            PromptName::MultiHopCtrl => json!({"enough": true, "top_node_ids": []}).to_string(),
            PromptName::ReasonSemantic => {
                let q = content_words(get("observation"));
                let hits: Vec<&str> = get("semantic_memory")
                    .lines()
                    .map(strip_number)
                    .filter(|l| content_words(l).iter().any(|w| q.contains(w)))
                    .collect();
                let info = if hits.is_empty() {
                    "null".to_string()
                } else {
                    hits.join("\n")
                };
                format!("### Reasoning\nKeep facts sharing words with the question.\n### Information\n{info}")
            }
            PromptName::ReasonProcedural => format!(
                "### Reasoning\nAll guidance applies.\n### Final Information\n{}",
                get("procedural_memory").trim()
            ),
            PromptName::ReasonEpisodic => format!(
                "Relevant information:\n{}\nAnswer: see the information above.",
                get("information").trim()
            ),
            PromptName::MergeSemantic => json!({
                "merged_statement": get("memory_later").trim(),
                "relationship": "UPDATE_SAME_FACT",
                "deactivate_earlier": true,
                "deactivate_later": true,
                "simple_reasoning": "The later statement supersedes the earlier one."
            })
            .to_string(),
        })
    }
}

impl ChatProvider for TemplateChat {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, ProviderError> {
        request.validate()?;
        self.respond(&request.prompt)
            .map(Completion::text)
            .ok_or_else(|| ProviderError::Fatal("prompt does not match any known template".into()))
    }
}
