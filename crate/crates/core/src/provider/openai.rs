//! Adapters for OpenAI-compatible chat and embedding endpoints.
//!
//! HTTP goes through the [`HttpTransport`] trait so retry behavior can be
//! exercised without a network.

use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatProvider, ChatRequest, Completion, Embedder, ProviderError};
use crate::vector::l2_normalize;

#[derive(Debug, Clone, PartialEq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

pub trait HttpTransport: Send + Sync {
    /// POST a JSON body. `Err` is a connection-level failure.
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
    ) -> Result<HttpResponse, String>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(120))
    }
}

impl HttpTransport for UreqTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
    ) -> Result<HttpResponse, String> {
        let mut req = self
            .agent
            .post(url)
            .header("Content-Type", "application/json");
        if let Some(token) = bearer {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req.send(body.to_string()).map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| e.to_string())?;
        Ok(HttpResponse { status, body })
    }
}

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn run<T>(
        &self,
        mut op: impl FnMut() -> Result<T, ProviderError>,
    ) -> Result<T, ProviderError> {
        let mut attempt = 0;
        loop {
            match op() {
                Err(e) if e.is_retryable() && attempt + 1 < self.attempts.max(1) => {
                    let delay = self.base_delay * 2u32.pow(attempt);
                    tracing::warn!(error = %e, attempt, ?delay, "retrying provider call");
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the API key; unset means no auth header.
    pub api_key_env: Option<String>,
}

impl EndpointConfig {
    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.base_url.trim_end_matches('/'), path)
    }

    fn api_key(&self) -> Option<String> {
        self.api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|k| !k.is_empty())
    }
}

fn classify(resp: HttpResponse) -> Result<Value, ProviderError> {
    match resp.status {
        200..=299 => serde_json::from_str(&resp.body)
            .map_err(|e| ProviderError::Fatal(format!("malformed response body: {e}"))),
        408 | 429 | 500..=599 => Err(ProviderError::Retryable(format!(
            "HTTP {}: {}",
            resp.status, resp.body
        ))),
        s => Err(ProviderError::Fatal(format!("HTTP {s}: {}", resp.body))),
    }
}

pub struct OpenAiChat {
    endpoint: EndpointConfig,
    transport: Arc<dyn HttpTransport>,
    retry: RetryPolicy,
    request_logprobs: bool,
}

impl OpenAiChat {
    pub fn new(endpoint: EndpointConfig, transport: Arc<dyn HttpTransport>) -> Self {
        Self {
            endpoint,
            transport,
            retry: RetryPolicy::default(),
            request_logprobs: false,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Ask for token logprobs so completions carry a perplexity.
    pub fn with_logprobs(mut self, on: bool) -> Self {
        self.request_logprobs = on;
        self
    }
}

/// Perplexity from an explicit `perplexity` field, else exp of the mean
/// negative token logprob.
fn perplexity_of(body: &Value) -> Option<f64> {
    if let Some(p) = body.get("perplexity").and_then(Value::as_f64) {
        return Some(p);
    }
    let tokens = body
        .pointer("/choices/0/logprobs/content")?
        .as_array()?
        .iter()
        .filter_map(|t| t.get("logprob").and_then(Value::as_f64))
        .collect::<Vec<_>>();
    if tokens.is_empty() {
        return None;
    }
    let mean = tokens.iter().sum::<f64>() / tokens.len() as f64;
    Some((-mean).exp())
}

impl ChatProvider for OpenAiChat {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, ProviderError> {
        request.validate()?;
        let mut body = json!({
            "model": self.endpoint.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
            "top_p": request.top_p,
        });
        if self.request_logprobs {
            body["logprobs"] = json!(true);
        }
        let url = self.endpoint.url("chat/completions");
        let key = self.endpoint.api_key();
        let value = self.retry.run(|| {
            let resp = self
                .transport
                .post_json(&url, key.as_deref(), &body)
                .map_err(ProviderError::Retryable)?;
            classify(resp)
        })?;
        let text = value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| {
                ProviderError::Fatal("response lacks choices[0].message.content".into())
            })?;
        Ok(Completion {
            text: text.to_string(),
            perplexity: perplexity_of(&value),
        })
    }
}

pub struct OpenAiEmbedder {
    endpoint: EndpointConfig,
    transport: Arc<dyn HttpTransport>,
    retry: RetryPolicy,
    dim: usize,
}

impl OpenAiEmbedder {
    pub fn new(endpoint: EndpointConfig, dim: usize, transport: Arc<dyn HttpTransport>) -> Self {
        Self {
            endpoint,
            transport,
            retry: RetryPolicy::default(),
            dim,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }
}

impl Embedder for OpenAiEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        if text.trim().is_empty() {
            return Err(ProviderError::Validation("cannot embed empty text".into()));
        }
        let body = json!({"model": self.endpoint.model, "input": text});
        let url = self.endpoint.url("embeddings");
        let key = self.endpoint.api_key();
        let value = self.retry.run(|| {
            let resp = self
                .transport
                .post_json(&url, key.as_deref(), &body)
                .map_err(ProviderError::Retryable)?;
            classify(resp)
        })?;
        let raw: Vec<f64> = value
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| ProviderError::Fatal("response lacks data[0].embedding".into()))?
            .iter()
            .map(|x| {
                x.as_f64()
                    .ok_or_else(|| ProviderError::Fatal("non-numeric embedding".into()))
            })
            .collect::<Result<_, _>>()?;
        if raw.len() != self.dim {
            return Err(ProviderError::Fatal(format!(
                "embedding dimension {} != configured {}",
                raw.len(),
                self.dim
            )));
        }
        l2_normalize(&raw).ok_or_else(|| ProviderError::Fatal("zero embedding returned".into()))
    }
}
