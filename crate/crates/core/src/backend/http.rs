//! Chat-completions and embeddings over HTTP, with retry and exponential backoff.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use super::{require_text, BackendError, ChatBackend, ChatRequest, Embedder, Embedding, Role};

#[derive(Clone, Debug, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

fn is_retryable_status(status: u16) -> bool {
    matches!(status, 408 | 429 | 500 | 502 | 503 | 504)
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireChatRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    top_p: f64,
    max_tokens: u32,
}

#[derive(Serialize)]
struct WireEmbedRequest<'a> {
    model: &'a str,
    input: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    embedding: Vec<f64>,
}

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    base_url: String,
    model: String,
    embed_model: String,
    embed_dim: usize,
    api_key: Option<String>,
    retry: RetryPolicy,
}

impl HttpBackend {
    pub fn new(
        base_url: &str,
        model: &str,
        embed_model: &str,
        embed_dim: usize,
        api_key: Option<String>,
        retry: RetryPolicy,
        timeout: Duration,
    ) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(HttpBackend {
            client,
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            embed_model: embed_model.to_string(),
            embed_dim,
            api_key,
            retry,
        })
    }

    /// Exact request body sent for `request`.
    pub fn chat_body(&self, request: &ChatRequest) -> String {
        chat_body(&self.model, request)
    }

    fn post(&self, path: &str, body: String) -> Result<String, BackendError> {
        let url = format!("{}/{}", self.base_url, path);
        let attempts = self.retry.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.retry.delay(attempt - 1);
                debug!(%url, attempt, ?delay, "retrying");
                thread::sleep(delay);
            }
            let mut req = self
                .client
                .post(&url)
                .header("Content-Type", "application/json")
                .body(body.clone());
            if let Some(key) = &self.api_key {
                req = req.header("Authorization", format!("Bearer {key}"));
            }
            match req.send() {
                Err(e) => {
                    warn!(%url, error = %e, "transport failure");
                    last = e.to_string();
                }
                Ok(resp) => {
                    let status = resp.status().as_u16();
                    let text = resp.text().map_err(|e| BackendError::Decode(e.to_string()))?;
                    if (200..300).contains(&status) {
                        return Ok(text);
                    }
                    if !is_retryable_status(status) {
                        return Err(BackendError::Provider {
                            status,
                            body: excerpt(&text),
                        });
                    }
                    warn!(%url, status, "retryable status");
                    last = format!("HTTP {status}: {}", excerpt(&text));
                }
            }
        }
        Err(BackendError::Timeout { attempts, last })
    }
}

pub(crate) fn chat_body(model: &str, request: &ChatRequest) -> String {
    let mut messages = Vec::with_capacity(request.messages.len() + 1);
    if !request.system_prompt.is_empty() {
        messages.push(WireMessage {
            role: "system",
            content: &request.system_prompt,
        });
    }
    for m in &request.messages {
        messages.push(WireMessage {
            role: match m.role {
                Role::User => "user",
                Role::Assistant => "assistant",
            },
            content: &m.content,
        });
    }
    serde_json::to_string(&WireChatRequest {
        model,
        messages,
        temperature: request.temperature,
        top_p: request.top_p,
        max_tokens: request.max_tokens,
    })
    .expect("wire request serializes")
}

fn excerpt(body: &str) -> String {
    const MAX: usize = 200;
    match body.char_indices().nth(MAX) {
        Some((i, _)) => format!("{}...", &body[..i]),
        None => body.to_string(),
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        request.validate()?;
        let text = self.post("chat/completions", self.chat_body(request))?;
        let parsed: ChatResponse =
            serde_json::from_str(&text).map_err(|e| BackendError::Decode(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::Decode("response has no choices[0].message.content".into()))
    }
}

impl Embedder for HttpBackend {
    fn dim(&self) -> usize {
        self.embed_dim
    }

    fn embed(&self, text: &str) -> Result<Embedding, BackendError> {
        require_text(text)?;
        let body = serde_json::to_string(&WireEmbedRequest {
            model: &self.embed_model,
            input: text,
        })
        .expect("wire request serializes");
        let resp = self.post("embeddings", body)?;
        let parsed: EmbedResponse =
            serde_json::from_str(&resp).map_err(|e| BackendError::Decode(e.to_string()))?;
        let vector = parsed
            .data
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Decode("response has no data[0].embedding".into()))?
            .embedding;
        if vector.len() != self.embed_dim {
            return Err(BackendError::Decode(format!(
                "embedding has {} components, configured dimension is {}",
                vector.len(),
                self.embed_dim
            )));
        }
        Embedding::new(vector)
    }
}
