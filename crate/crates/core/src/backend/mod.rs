//! Chat-completion and embedding providers.
//!
//! Two families: [`http::HttpBackend`] talks to any chat-completions style
//! endpoint, while [`scripted::ScriptedBackend`] and
//! [`embed::HashingEmbedder`] are deterministic stand-ins used for offline
//! runs and tests.

pub mod embed;
pub mod http;
pub mod scripted;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embed::HashingEmbedder;
pub use http::{HttpBackend, RetryPolicy};
pub use scripted::ScriptedBackend;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("provider returned HTTP {status}: {body}")]
    Provider { status: u16, body: String },
    #[error("gave up after {attempts} attempts: {last}")]
    Timeout { attempts: u32, last: String },
    #[error("no scripted reply matches request digest {digest}")]
    Unmatched { digest: String },
    #[error("malformed provider response: {0}")]
    Decode(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    /// Routing label for scripted replies (the claim id). Never sent on the
    /// wire and not part of the digest.
    pub tag: Option<String>,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.messages.is_empty() {
            return Err(BackendError::InvalidRequest("no messages".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(BackendError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(BackendError::InvalidRequest(format!("top_p {} outside (0, 1]", self.top_p)));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 over (system prompt, messages, temperature).
    pub fn digest(&self) -> String {
        crate::content_digest(&(&self.system_prompt, &self.messages, self.temperature))
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError>;
}

/// A finite, fixed-length vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(vector: Vec<f64>) -> Result<Self, BackendError> {
        if vector.is_empty() {
            return Err(BackendError::Decode("embedding has no components".into()));
        }
        if let Some(i) = vector.iter().position(|x| !x.is_finite()) {
            return Err(BackendError::Decode(format!("embedding component {i} is not finite")));
        }
        Ok(Embedding(vector))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = BackendError;
    fn try_from(v: Vec<f64>) -> Result<Self, BackendError> {
        Embedding::new(v)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Embedding, BackendError>;
}

pub(crate) fn require_text(text: &str) -> Result<(), BackendError> {
    if text.trim().is_empty() {
        return Err(BackendError::Precondition("cannot embed empty text".into()));
    }
    Ok(())
}
