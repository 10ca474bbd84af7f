//! Chat-model driver for the text version of the task.
//!
//! [`prompt`] renders the protocol text, [`parse`] classifies replies,
//! [`session`] plays full games against a [`ChatEndpoint`], and [`http`] is
//! the wire client for chat-completion servers.

pub mod http;
pub mod parse;
pub mod prompt;
pub mod session;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::{parse_response, Classification, ParseMode, ParsedResponse};
pub use prompt::{PromptContext, PromptKind, TemplateError, Templates};
pub use session::{run_session, run_session_to_files, GameLog, Transcript};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("invalid protocol config: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] crate::env::EnvError),
    #[error(transparent)]
    Store(#[from] crate::store::StoreError),
    #[error("{path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
}

/// Failure modes of one completion request.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum EndpointError {
    #[error("rate limited")]
    RateLimited { retry_after: Option<Duration> },
    #[error("request timed out")]
    Timeout,
    #[error("transient failure: {0}")]
    Transient(String),
    /// Not worth retrying (bad request, authentication, malformed reply).
    #[error("request failed: {0}")]
    Fatal(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReasoningEffort {
    Low,
    High,
    /// Field omitted from requests.
    #[default]
    None,
}

impl ReasoningEffort {
    pub fn as_param(self) -> Option<&'static str> {
        match self {
            ReasoningEffort::Low => Some("low"),
            ReasoningEffort::High => Some("high"),
            ReasoningEffort::None => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: "system".into(), content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: "user".into(), content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: "assistant".into(), content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reasoning_effort: Option<&'static str>,
}

/// Anything that answers a chat request with text.
pub trait ChatEndpoint: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, EndpointError>;
}

/// Endpoint backed by a closure; handy for scripted and oracle mocks.
pub struct FnEndpoint<F>(pub F);

impl<F> ChatEndpoint for FnEndpoint<F>
where
    F: Fn(&ChatRequest) -> Result<String, EndpointError> + Send + Sync,
{
    fn complete(&self, request: &ChatRequest) -> Result<String, EndpointError> {
        (self.0)(request)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    /// Base URL; requests go to `{endpoint}/chat/completions`.
    pub endpoint: String,
    pub model: String,
    pub reasoning_effort: ReasoningEffort,
    /// Condition label written to trajectories.
    pub condition: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
    /// Minimum spacing between requests across all concurrent games.
    pub min_request_interval_ms: u64,
    pub parallelism: usize,
    pub parse_mode: ParseMode,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub templates: Templates,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            endpoint: "http://127.0.0.1:8000/v1".into(),
            model: "local-model".into(),
            reasoning_effort: ReasoningEffort::None,
            condition: "base".into(),
            temperature: 0.0,
            max_tokens: 16,
            timeout_secs: 60,
            max_retries: 5,
            backoff_base_ms: 500,
            backoff_max_ms: 30_000,
            min_request_interval_ms: 0,
            parallelism: 4,
            parse_mode: ParseMode::Strict,
            api_key_env: "APR_API_KEY".into(),
            templates: Templates::default(),
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        self.templates.validate()?;
        if self.parallelism == 0 || self.max_tokens == 0 || self.timeout_secs == 0 {
            return Err(LlmError::Config("parallelism, max_tokens and timeout_secs must be positive".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(LlmError::Config("temperature must be non-negative".into()));
        }
        Ok(())
    }

    /// Delay before retry number `attempt` (0-based).
    pub fn backoff(&self, attempt: u32) -> Duration {
        let ms = self.backoff_base_ms.saturating_mul(1u64 << attempt.min(20));
        Duration::from_millis(ms.min(self.backoff_max_ms))
    }
}
