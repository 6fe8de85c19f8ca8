//! Builds the chat and embedding backends named by the configuration.

use std::sync::Arc;
use std::time::Duration;

use kgmem_core::provider::openai::{EndpointConfig, OpenAiChat, OpenAiEmbedder, UreqTransport};
use kgmem_core::provider::{
    HashEmbedder, PromptSet, Providers, ScriptRule, ScriptedChat, TemplateChat,
};

use crate::config::ServiceConfig;
use crate::error::CliError;

pub fn prompts(cfg: &ServiceConfig) -> Result<PromptSet, CliError> {
    match &cfg.prompt_dir {
        Some(dir) => PromptSet::load_dir(dir).map_err(|e| CliError::Validation(e.to_string())),
        None => Ok(PromptSet::builtin()),
    }
}

/// Rules file: a JSON array of `{"match": {...}, "response": ...}` objects.
pub fn load_script(path: &std::path::Path) -> Result<Vec<ScriptRule>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::Validation(format!("cannot read mock script {}: {e}", path.display()))
    })?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("mock script {}: {e}", path.display())))
}

pub fn build(cfg: &ServiceConfig) -> Result<Providers, CliError> {
    let prompts = prompts(cfg)?;
    if cfg.mock_providers {
        let template = TemplateChat::new(Arc::new(prompts.clone()));
        let rules = match &cfg.mock_script {
            Some(path) => load_script(path)?,
            None => Vec::new(),
        };
        let chat =
            ScriptedChat::from_rules(rules).responder(move |prompt| template.respond(prompt));
        let embedder = HashEmbedder::new(cfg.embedding_dim);
        return Ok(Providers::new(Arc::new(chat), Arc::new(embedder)).with_prompts(prompts));
    }
    let missing = |k: &str| {
        CliError::Validation(format!("{k} is required unless mock providers are enabled"))
    };
    let chat_url = cfg
        .chat_base_url
        .clone()
        .ok_or_else(|| missing("chat_base_url"))?;
    let chat_model = cfg
        .chat_model
        .clone()
        .ok_or_else(|| missing("chat_model"))?;
    let embed_model = cfg
        .embed_model
        .clone()
        .ok_or_else(|| missing("embed_model"))?;
    let embed_url = cfg
        .embed_base_url
        .clone()
        .unwrap_or_else(|| chat_url.clone());
    let transport = Arc::new(UreqTransport::new(Duration::from_secs(cfg.timeout_secs)));
    let chat = OpenAiChat::new(
        EndpointConfig {
            base_url: chat_url,
            model: chat_model,
            api_key_env: cfg.api_key_env.clone(),
        },
        transport.clone(),
    );
    let embedder = OpenAiEmbedder::new(
        EndpointConfig {
            base_url: embed_url,
            model: embed_model,
            api_key_env: cfg.api_key_env.clone(),
        },
        cfg.embedding_dim,
        transport,
    );
    Ok(Providers::new(Arc::new(chat), Arc::new(embedder)).with_prompts(prompts))
}
