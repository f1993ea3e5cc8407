//! Model access behind a single completion interface.

mod drift;
mod http;
mod mock;

pub use drift::{corrupt, load_drift_file, DriftFile, DriftError, DriftProfile};
pub use http::{HttpConfig, HttpProvider, API_KEY_ENV, BASE_URL_ENV};
pub use mock::MockProvider;

use serde::{Deserialize, Serialize};

use crate::taxonomy::FailureMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model_tag: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    /// Test case id. Only the mock reads it.
    pub case_ref: Option<String>,
}

impl ChatRequest {
    pub fn new(model_tag: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        Self {
            model_tag: model_tag.into(),
            messages,
            temperature: 0.0,
            case_ref: None,
        }
    }

    pub fn with_case(mut self, case_id: impl Into<String>) -> Self {
        self.case_ref = Some(case_id.into());
        self
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.messages.is_empty() {
            return Err(ProviderError::InvalidRequest("request has no messages".into()));
        }
        if self.messages.iter().any(|m| m.content.is_empty()) {
            return Err(ProviderError::InvalidRequest("message content is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl Usage {
    /// Whitespace-token approximation used when no tokenizer is at hand.
    pub fn approximate<'a>(input: impl IntoIterator<Item = &'a str>, output: &str) -> Self {
        Self {
            input_tokens: input.into_iter().map(|s| s.split_whitespace().count() as u64).sum(),
            output_tokens: output.split_whitespace().count() as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatResponse {
    pub content: String,
    pub usage: Usage,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderError {
    #[error("network error: {0}")]
    NetworkError(String),
    #[error("authentication rejected (HTTP {0})")]
    AuthError(u16),
    #[error("rate limited after {0} attempts")]
    RateLimited(u32),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("unknown case {0:?}")]
    UnknownCase(Option<String>),
    #[error("mode {mode} does not apply to case {case}")]
    InapplicableMode { case: String, mode: FailureMode },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

pub trait Provider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError>;
}

impl<P: Provider + ?Sized> Provider for Box<P> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        (**self).complete(request)
    }
}

impl<P: Provider + ?Sized> Provider for &P {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        (**self).complete(request)
    }
}
