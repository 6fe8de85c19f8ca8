//! Text-generation and embedding backends.
//!
//! Every prompt-driven operation in the engine talks to a [`ChatProvider`] and
//! an [`Embedder`]. The mock implementations in [`mock`] are deterministic and
//! back the whole test suite; [`openai`] speaks to OpenAI-compatible endpoints.

pub mod heuristic;
pub mod mock;
pub mod openai;
pub mod prompts;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use heuristic::TemplateChat;
pub use mock::{FailingChat, HashEmbedder, ScriptRule, ScriptedChat};
pub use prompts::{PromptError, PromptName, PromptSet};

#[derive(Debug, Clone, thiserror::Error)]
pub enum ProviderError {
    /// Transient failure (rate limit, 5xx, transport). Safe to retry.
    #[error("retryable provider error: {0}")]
    Retryable(String),
    #[error("fatal provider error: {0}")]
    Fatal(String),
    #[error("invalid provider input: {0}")]
    Validation(String),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ProviderError::Retryable(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub top_p: f64,
}

impl ChatRequest {
    /// Request with the decoding defaults used throughout the engine.
    pub fn new(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            max_tokens: 2048,
            temperature: 0.0,
            top_p: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.prompt.trim().is_empty() {
            return Err(ProviderError::Validation("empty prompt".into()));
        }
        if self.max_tokens == 0 {
            return Err(ProviderError::Validation(
                "max_tokens must be positive".into(),
            ));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(ProviderError::Validation("temperature must be >= 0".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(ProviderError::Validation("top_p must be in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    /// Output perplexity, when the backend reports one.
    pub perplexity: Option<f64>,
}

impl Completion {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            perplexity: None,
        }
    }
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, ProviderError>;

    fn chat(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        self.complete(request).map(|c| c.text)
    }
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    /// Unit-norm embedding of `text`.
    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError>;
}

impl<T: ChatProvider + ?Sized> ChatProvider for Arc<T> {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, ProviderError> {
        (**self).complete(request)
    }
}

impl<T: Embedder + ?Sized> Embedder for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        (**self).embed(text)
    }
}

/// The chat backend, embedder and templates used by every prompt-driven step.
#[derive(Clone)]
pub struct Providers {
    pub chat: Arc<dyn ChatProvider>,
    pub embedder: Arc<dyn Embedder>,
    pub prompts: Arc<PromptSet>,
}

impl Providers {
    pub fn new(chat: Arc<dyn ChatProvider>, embedder: Arc<dyn Embedder>) -> Self {
        Self {
            chat,
            embedder,
            prompts: Arc::new(PromptSet::builtin()),
        }
    }

    pub fn with_prompts(mut self, prompts: PromptSet) -> Self {
        self.prompts = Arc::new(prompts);
        self
    }

    /// Render `name` with `vars` and return the completion text.
    pub fn ask(&self, name: PromptName, vars: &[(&str, &str)]) -> crate::Result<String> {
        let prompt = self.prompts.render(name, vars)?;
        Ok(self.chat.chat(&ChatRequest::new(prompt))?)
    }

    pub fn embed(&self, text: &str) -> crate::Result<Vec<f64>> {
        Ok(self.embedder.embed(text)?)
    }
}

/// Counts memory length in tokens.
pub trait Tokenizer: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

/// Send `request` to `primary`; fall back when its perplexity exceeds
/// `threshold`. A primary that reports no perplexity is always trusted.
pub fn route(
    request: &ChatRequest,
    primary: &dyn ChatProvider,
    fallback: &dyn ChatProvider,
    threshold: f64,
) -> Result<String, ProviderError> {
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(ProviderError::Validation(
            "perplexity threshold must be > 0".into(),
        ));
    }
    match primary.complete(request) {
        Ok(c) => match c.perplexity {
            Some(ppl) if ppl > threshold => match fallback.chat(request) {
                Ok(text) => Ok(text),
                Err(e) => {
                    tracing::warn!(error = %e, "fallback failed, keeping primary output");
                    Ok(c.text)
                }
            },
            _ => Ok(c.text),
        },
        Err(primary_err) => fallback.chat(request).map_err(|fallback_err| {
            ProviderError::Fatal(format!(
                "both backends failed: primary: {primary_err}; fallback: {fallback_err}"
            ))
        }),
    }
}

/// A [`ChatProvider`] that applies [`route`] on every call.
pub struct RoutedChat {
    pub primary: Arc<dyn ChatProvider>,
    pub fallback: Arc<dyn ChatProvider>,
    pub perplexity_threshold: f64,
}

impl ChatProvider for RoutedChat {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, ProviderError> {
        route(
            request,
            self.primary.as_ref(),
            self.fallback.as_ref(),
            self.perplexity_threshold,
        )
        .map(Completion::text)
    }
}
