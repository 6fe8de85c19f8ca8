//! Deterministic providers for tests and offline runs.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatProvider, ChatRequest, Completion, Embedder, ProviderError};
use crate::vector::l2_normalize;

/// Bag-of-tokens embedder: lowercase whitespace tokens (edge punctuation
/// stripped) are hashed into `dim` buckets, counted and L2-normalized.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
        text.split_whitespace()
            .map(|t| {
                t.trim_matches(|c: char| !c.is_alphanumeric())
                    .to_lowercase()
            })
            .filter(|t| !t.is_empty())
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a(token.as_bytes()) % self.dim as u64) as usize
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(crate::graph::DEFAULT_EMBEDDING_DIM)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        if text.trim().is_empty() {
            return Err(ProviderError::Validation("cannot embed empty text".into()));
        }
        let mut v = vec![0.0; self.dim];
        for tok in Self::tokens(text) {
            v[self.bucket(&tok)] += 1.0;
        }
        l2_normalize(&v)
            .ok_or_else(|| ProviderError::Validation(format!("no embeddable tokens in {text:?}")))
    }
}

/// How a scripted response is matched against a prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptMatch {
    Exact(String),
    /// Hex SHA-256 of the full prompt.
    PromptHash(String),
    /// Every listed substring must occur in the prompt.
    Contains(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(rename = "match")]
    pub matcher: ScriptMatch,
    pub response: String,
    #[serde(default)]
    pub perplexity: Option<f64>,
}

pub fn prompt_hash(prompt: &str) -> String {
    let digest = Sha256::digest(prompt.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

type Responder = dyn Fn(&str) -> Option<String> + Send + Sync;

/// Chat provider answering from a script keyed by prompt content.
///
/// Lookup order: exact prompt, prompt hash, then `contains` rules and
/// responders in registration order. No match is a fatal error. Because
/// matching depends only on the prompt, results do not depend on call order.
#[derive(Default, Clone)]
pub struct ScriptedChat {
    exact: HashMap<String, ScriptRule>,
    hashed: HashMap<String, ScriptRule>,
    ordered: Vec<Ordered>,
    calls: Arc<AtomicUsize>,
}

#[derive(Clone)]
enum Ordered {
    Rule(ScriptRule),
    Responder(Arc<Responder>),
}

impl ScriptedChat {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_rules(rules: impl IntoIterator<Item = ScriptRule>) -> Self {
        let mut s = Self::new();
        for r in rules {
            s.add_rule(r);
        }
        s
    }

    pub fn add_rule(&mut self, rule: ScriptRule) -> &mut Self {
        match &rule.matcher {
            ScriptMatch::Exact(p) => {
                self.exact.insert(p.clone(), rule);
            }
            ScriptMatch::PromptHash(h) => {
                self.hashed.insert(h.to_ascii_lowercase(), rule);
            }
            ScriptMatch::Contains(_) => self.ordered.push(Ordered::Rule(rule)),
        }
        self
    }

    pub fn exact(mut self, prompt: impl Into<String>, response: impl Into<String>) -> Self {
        self.add_rule(ScriptRule {
            matcher: ScriptMatch::Exact(prompt.into()),
            response: response.into(),
            perplexity: None,
        });
        self
    }

    pub fn hashed(mut self, hash: impl Into<String>, response: impl Into<String>) -> Self {
        self.add_rule(ScriptRule {
            matcher: ScriptMatch::PromptHash(hash.into()),
            response: response.into(),
            perplexity: None,
        });
        self
    }

    /// Respond when all `needles` occur in the prompt.
    pub fn when<S: Into<String>>(
        mut self,
        needles: impl IntoIterator<Item = S>,
        response: impl Into<String>,
    ) -> Self {
        self.add_rule(ScriptRule {
            matcher: ScriptMatch::Contains(needles.into_iter().map(Into::into).collect()),
            response: response.into(),
            perplexity: None,
        });
        self
    }

    /// Compute the response from the prompt; `None` passes to later rules.
    pub fn responder(mut self, f: impl Fn(&str) -> Option<String> + Send + Sync + 'static) -> Self {
        self.ordered.push(Ordered::Responder(Arc::new(f)));
        self
    }

    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn lookup(&self, prompt: &str) -> Option<Completion> {
        let hit = |r: &ScriptRule| Completion {
            text: r.response.clone(),
            perplexity: r.perplexity,
        };
        if let Some(r) = self.exact.get(prompt) {
            return Some(hit(r));
        }
        if !self.hashed.is_empty() {
            if let Some(r) = self.hashed.get(&prompt_hash(prompt)) {
                return Some(hit(r));
            }
        }
        for o in &self.ordered {
            match o {
                Ordered::Rule(r) => {
                    if let ScriptMatch::Contains(needles) = &r.matcher {
                        if needles.iter().all(|n| prompt.contains(n.as_str())) {
                            return Some(hit(r));
                        }
                    }
                }
                Ordered::Responder(f) => {
                    if let Some(text) = f(prompt) {
                        return Some(Completion::text(text));
                    }
                }
            }
        }
        None
    }
}

impl ChatProvider for ScriptedChat {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, ProviderError> {
        request.validate()?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.lookup(&request.prompt).ok_or_else(|| {
            let head: String = request.prompt.chars().take(80).collect();
            ProviderError::Fatal(format!(
                "no scripted response for prompt {} ({head:?}...)",
                prompt_hash(&request.prompt)
            ))
        })
    }
}

/// Wraps a provider and fails the call with index `fail_at` (0-based).
pub struct FailingChat<P> {
    inner: P,
    fail_at: usize,
    calls: AtomicUsize,
    error: ProviderError,
}

impl<P: ChatProvider> FailingChat<P> {
    pub fn new(inner: P, fail_at: usize) -> Self {
        Self {
            inner,
            fail_at,
            calls: AtomicUsize::new(0),
            error: ProviderError::Fatal("injected failure".into()),
        }
    }

    pub fn with_error(mut self, error: ProviderError) -> Self {
        self.error = error;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<P: ChatProvider> ChatProvider for FailingChat<P> {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, ProviderError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if n == self.fail_at {
            return Err(self.error.clone());
        }
        self.inner.complete(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vector::cosine;

    #[test]
    fn scripted_echo_and_fail_closed() {
        let chat = ScriptedChat::new().exact("p1", "### Score\n7");
        assert_eq!(chat.chat(&ChatRequest::new("p1")).unwrap(), "### Score\n7");
        assert!(matches!(
            chat.chat(&ChatRequest::new("p2")),
            Err(ProviderError::Fatal(_))
        ));
        assert_eq!(chat.call_count(), 2);
    }

    #[test]
    fn hash_keyed_script() {
        let chat = ScriptedChat::new().hashed(prompt_hash("rate this"), "### Score\n7");
        assert_eq!(
            chat.chat(&ChatRequest::new("rate this")).unwrap(),
            "### Score\n7"
        );
    }

    #[test]
    fn contains_rules_in_order() {
        let chat = ScriptedChat::new()
            .when(["alpha", "beta"], "both")
            .when(["alpha"], "one");
        assert_eq!(chat.chat(&ChatRequest::new("alpha beta")).unwrap(), "both");
        assert_eq!(chat.chat(&ChatRequest::new("alpha")).unwrap(), "one");
    }

    #[test]
    fn rule_json_shape() {
        let rule: ScriptRule = serde_json::from_str(
            r####"{"match": {"contains": ["### Facts"]}, "response": "x"}"####,
        )
        .unwrap();
        assert_eq!(
            rule.matcher,
            ScriptMatch::Contains(vec!["### Facts".into()])
        );
    }

    #[test]
    fn embedder_overlap_ordering() {
        let e = HashEmbedder::new(64);
        let aab = e.embed("a a b").unwrap();
        let ab = e.embed("a b").unwrap();
        let cd = e.embed("c d").unwrap();
        // a, b, c, d land in distinct buckets, so cos(aab, ab) = 3/sqrt(10) and cos(aab, cd) = 0.
        let buckets: std::collections::HashSet<_> =
            ["a", "b", "c", "d"].iter().map(|t| e.bucket(t)).collect();
        assert_eq!(buckets.len(), 4);
        assert!((cosine(&aab, &ab) - 3.0 / 10f64.sqrt()).abs() < 1e-12);
        assert!(cosine(&aab, &ab) > cosine(&aab, &cd));
    }

    #[test]
    fn embedder_is_deterministic_and_validates() {
        let e = HashEmbedder::new(64);
        assert_eq!(
            e.embed("hello world").unwrap(),
            e.embed("hello world").unwrap()
        );
        assert!(matches!(e.embed(""), Err(ProviderError::Validation(_))));
        assert!(matches!(e.embed("   "), Err(ProviderError::Validation(_))));
        assert_eq!(
            e.embed("Hello, WORLD!").unwrap(),
            e.embed("hello world").unwrap()
        );
    }

    #[test]
    fn failing_chat_fails_once() {
        let chat = FailingChat::new(ScriptedChat::new().when(["x"], "ok"), 1);
        assert!(chat.chat(&ChatRequest::new("x")).is_ok());
        assert!(chat.chat(&ChatRequest::new("x")).is_err());
        assert!(chat.chat(&ChatRequest::new("x")).is_ok());
    }
}
