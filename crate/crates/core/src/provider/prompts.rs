//! Prompt templates and `{name}` substitution.
//!
//! The built-in templates live in `prompts/<name>.txt` and are compiled in;
//! a directory with the same layout can override any of them at startup.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("template {template} references {{{var}}} but no value was supplied")]
    MissingVar { template: PromptName, var: String },
    #[error("template {template} does not use variable {var:?}")]
    UnknownVar { template: PromptName, var: String },
    #[error("unknown prompt name {0:?}")]
    UnknownName(String),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PromptName {
    GetState,
    GetSubgoal,
    GetReward,
    GetSemantic,
    GetProcedural,
    GetReturn,
    GetNewSubgoal,
    GetMode,
    GetPlan,
    MultiHopCtrl,
    ReasonEpisodic,
    ReasonSemantic,
    ReasonProcedural,
    MergeSemantic,
}

impl PromptName {
    pub const ALL: [PromptName; 14] = [
        PromptName::GetState,
        PromptName::GetSubgoal,
        PromptName::GetReward,
        PromptName::GetSemantic,
        PromptName::GetProcedural,
        PromptName::GetReturn,
        PromptName::GetNewSubgoal,
        PromptName::GetMode,
        PromptName::GetPlan,
        PromptName::MultiHopCtrl,
        PromptName::ReasonEpisodic,
        PromptName::ReasonSemantic,
        PromptName::ReasonProcedural,
        PromptName::MergeSemantic,
    ];

    pub fn file_stem(self) -> &'static str {
        match self {
            PromptName::GetState => "get_state",
            PromptName::GetSubgoal => "get_subgoal",
            PromptName::GetReward => "get_reward",
            PromptName::GetSemantic => "get_semantic",
            PromptName::GetProcedural => "get_procedural",
            PromptName::GetReturn => "get_return",
            PromptName::GetNewSubgoal => "get_new_subgoal",
            PromptName::GetMode => "get_mode",
            PromptName::GetPlan => "get_plan",
            PromptName::MultiHopCtrl => "multi_hop_ctrl",
            PromptName::ReasonEpisodic => "reason_episodic",
            PromptName::ReasonSemantic => "reason_semantic",
            PromptName::ReasonProcedural => "reason_procedural",
            PromptName::MergeSemantic => "merge_semantic",
        }
    }

    fn builtin(self) -> &'static str {
        match self {
            PromptName::GetState => include_str!("../../prompts/get_state.txt"),
            PromptName::GetSubgoal => include_str!("../../prompts/get_subgoal.txt"),
            PromptName::GetReward => include_str!("../../prompts/get_reward.txt"),
            PromptName::GetSemantic => include_str!("../../prompts/get_semantic.txt"),
            PromptName::GetProcedural => include_str!("../../prompts/get_procedural.txt"),
            PromptName::GetReturn => include_str!("../../prompts/get_return.txt"),
            PromptName::GetNewSubgoal => include_str!("../../prompts/get_new_subgoal.txt"),
            PromptName::GetMode => include_str!("../../prompts/get_mode.txt"),
            PromptName::GetPlan => include_str!("../../prompts/get_plan.txt"),
            PromptName::MultiHopCtrl => include_str!("../../prompts/multi_hop_ctrl.txt"),
            PromptName::ReasonEpisodic => include_str!("../../prompts/reason_episodic.txt"),
            PromptName::ReasonSemantic => include_str!("../../prompts/reason_semantic.txt"),
            PromptName::ReasonProcedural => include_str!("../../prompts/reason_procedural.txt"),
            PromptName::MergeSemantic => include_str!("../../prompts/merge_semantic.txt"),
        }
    }
}

impl fmt::Display for PromptName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.file_stem())
    }
}

impl FromStr for PromptName {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PromptName::ALL
            .into_iter()
            .find(|n| n.file_stem() == s)
            .ok_or_else(|| PromptError::UnknownName(s.to_string()))
    }
}

/// Placeholders are `{identifier}` with a lowercase ASCII identifier, so
/// literal JSON braces in a template are left alone.
fn placeholder_at(s: &str, start: usize) -> Option<(&str, usize)> {
    let rest = &s[start + 1..];
    let end = rest.find('}')?;
    let ident = &rest[..end];
    let valid = !ident.is_empty()
        && ident
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
        && ident.as_bytes()[0].is_ascii_lowercase();
    valid.then_some((ident, start + 1 + end + 1))
}

/// Names of all `{identifier}` placeholders in `text`, in order of first use.
pub fn placeholders(text: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut i = 0;
    while let Some(off) = text[i..].find('{') {
        let pos = i + off;
        match placeholder_at(text, pos) {
            Some((ident, next)) => {
                if !out.iter().any(|o| o == ident) {
                    out.push(ident.to_string());
                }
                i = next;
            }
            None => i = pos + 1,
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Piece<'a> {
    Lit(&'a str),
    Var(&'a str),
}

/// Split a template into literal text and placeholders.
pub fn pieces(text: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let (mut lit_start, mut i) = (0, 0);
    while let Some(off) = text[i..].find('{') {
        let pos = i + off;
        match placeholder_at(text, pos) {
            Some((ident, next)) => {
                if pos > lit_start {
                    out.push(Piece::Lit(&text[lit_start..pos]));
                }
                out.push(Piece::Var(ident));
                lit_start = next;
                i = next;
            }
            None => i = pos + 1,
        }
    }
    if lit_start < text.len() {
        out.push(Piece::Lit(&text[lit_start..]));
    }
    out
}

/// Recover placeholder values from a prompt rendered from `template`. Each
/// value extends to the first occurrence of the following literal, so a
/// value that itself contains that literal is split early.
pub fn unrender(template: &str, prompt: &str) -> Option<BTreeMap<String, String>> {
    let parts = pieces(template);
    let mut vars = BTreeMap::new();
    let mut pos = 0;
    for (k, piece) in parts.iter().enumerate() {
        match piece {
            Piece::Lit(l) => {
                if !prompt[pos..].starts_with(l) {
                    return None;
                }
                pos += l.len();
            }
            Piece::Var(name) => {
                let end = match parts.get(k + 1) {
                    None => prompt.len(),
                    Some(Piece::Lit(l)) if k + 2 == parts.len() => {
                        if !prompt.ends_with(l) || prompt.len() - l.len() < pos {
                            return None;
                        }
                        prompt.len() - l.len()
                    }
                    Some(Piece::Lit(l)) => pos + prompt[pos..].find(l)?,
                    Some(Piece::Var(_)) => return None,
                };
                vars.insert(name.to_string(), prompt[pos..end].to_string());
                pos = end;
            }
        }
    }
    (pos == prompt.len()).then_some(vars)
}

#[derive(Debug, Clone)]
pub struct PromptSet {
    templates: BTreeMap<PromptName, String>,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptSet {
    pub fn builtin() -> Self {
        let templates = PromptName::ALL
            .into_iter()
            .map(|n| (n, n.builtin().to_string()))
            .collect();
        Self { templates }
    }

    /// Built-in templates overridden by any `<name>.txt` present in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut set = Self::builtin();
        for name in PromptName::ALL {
            let path = dir.join(format!("{}.txt", name.file_stem()));
            match std::fs::read_to_string(&path) {
                Ok(text) => {
                    set.templates.insert(name, text);
                }
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(source) => {
                    return Err(PromptError::Io {
                        path: path.display().to_string(),
                        source,
                    })
                }
            }
        }
        Ok(set)
    }

    pub fn template(&self, name: PromptName) -> &str {
        &self.templates[&name]
    }

    /// Substitute every placeholder in one pass. Values are inserted
    /// verbatim and never rescanned.
    pub fn render(&self, name: PromptName, vars: &[(&str, &str)]) -> Result<String, PromptError> {
        let template = self.template(name);
        let used = placeholders(template);
        if let Some((var, _)) = vars.iter().find(|(k, _)| !used.iter().any(|u| u == k)) {
            return Err(PromptError::UnknownVar {
                template: name,
                var: var.to_string(),
            });
        }
        let mut out = String::with_capacity(template.len() + 256);
        let mut i = 0;
        while let Some(off) = template[i..].find('{') {
            let pos = i + off;
            out.push_str(&template[i..pos]);
            match placeholder_at(template, pos) {
                Some((ident, next)) => {
                    let value = vars
                        .iter()
                        .find(|(k, _)| *k == ident)
                        .map(|(_, v)| *v)
                        .ok_or_else(|| PromptError::MissingVar {
                            template: name,
                            var: ident.to_string(),
                        })?;
                    out.push_str(value);
                    i = next;
                }
                None => {
                    out.push('{');
                    i = pos + 1;
                }
            }
        }
        out.push_str(&template[i..]);
        Ok(out)
    }
}
