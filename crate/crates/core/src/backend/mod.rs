//! Chat-completion backends for the target and optimizer models.
//!
//! Every call goes through a [`Client`], which retries transient transport
//! failures and books token usage into a shared [`UsageLedger`] under the
//! caller's [`Phase`].

mod json;
mod ledger;
mod live;
mod scripted;

use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use json::extract_json_object;
pub use ledger::{cost_per_point, LedgerSnapshot, Phase, Usage, UsageLedger};
pub use live::{LiveBackend, LiveConfig};
pub use scripted::{ScriptEntry, ScriptedBackend};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    /// Worth retrying: connection reset, 429, 5xx.
    #[error("transient transport failure: {0}")]
    Transient(String),
    #[error("transport failed after {attempts} attempts: {message}")]
    Transport { attempts: usize, message: String },
    #[error("script exhausted: no entry left for request")]
    ScriptExhausted,
    #[error("no valid JSON object after {rounds} rounds; last output: {last_raw:?}")]
    MalformedOutput { rounds: usize, last_raw: String },
    #[error("backend misconfigured: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReasoningEffort {
    Low,
    #[default]
    Medium,
    High,
}

impl ReasoningEffort {
    pub fn as_str(&self) -> &'static str {
        match self {
            ReasoningEffort::Low => "low",
            ReasoningEffort::Medium => "medium",
            ReasoningEffort::High => "high",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub messages: Vec<Message>,
    #[serde(default)]
    pub reasoning_effort: ReasoningEffort,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_output_tokens: Option<u32>,
}

impl ChatRequest {
    pub fn new(model_id: impl Into<String>, messages: Vec<Message>) -> Self {
        Self {
            model_id: model_id.into(),
            messages,
            reasoning_effort: ReasoningEffort::Medium,
            max_output_tokens: None,
        }
    }

    pub fn last_user(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or_default()
    }

    pub fn system(&self) -> &str {
        self.messages
            .iter()
            .find(|m| m.role == Role::System)
            .map(|m| m.content.as_str())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub usage: Usage,
    pub latency_ms: f64,
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError>;

    /// Backends whose answers depend on call order (scripts) report true so
    /// worker pools run them one call at a time.
    fn sequential(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: usize,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

/// A backend bound to a model id, retry policy, and usage ledger.
#[derive(Clone)]
pub struct Client {
    backend: Arc<dyn ChatBackend>,
    ledger: Arc<UsageLedger>,
    retry: RetryPolicy,
    model_id: String,
    reasoning_effort: ReasoningEffort,
}

impl Client {
    pub fn new(backend: Arc<dyn ChatBackend>, ledger: Arc<UsageLedger>, model_id: impl Into<String>) -> Self {
        Self {
            backend,
            ledger,
            retry: RetryPolicy::default(),
            model_id: model_id.into(),
            reasoning_effort: ReasoningEffort::Medium,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_reasoning_effort(mut self, effort: ReasoningEffort) -> Self {
        self.reasoning_effort = effort;
        self
    }

    pub fn ledger(&self) -> &Arc<UsageLedger> {
        &self.ledger
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn sequential(&self) -> bool {
        self.backend.sequential()
    }

    pub fn request(&self, messages: Vec<Message>) -> ChatRequest {
        ChatRequest {
            model_id: self.model_id.clone(),
            messages,
            reasoning_effort: self.reasoning_effort,
            max_output_tokens: None,
        }
    }

    pub fn complete(&self, phase: Phase, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let mut backoff = self.retry.initial_backoff;
        let mut attempt = 0;
        loop {
            attempt += 1;
            let started = Instant::now();
            match self.backend.complete(req) {
                Ok(mut resp) => {
                    if resp.latency_ms == 0.0 {
                        resp.latency_ms = started.elapsed().as_secs_f64() * 1000.0;
                    }
                    self.ledger.record(phase, resp.usage);
                    return Ok(resp);
                }
                Err(BackendError::Transient(message)) => {
                    if attempt >= self.retry.max_attempts {
                        return Err(BackendError::Transport { attempts: attempt, message });
                    }
                    log::warn!("transient backend failure (attempt {attempt}): {message}");
                    thread::sleep(backoff);
                    backoff *= 2;
                }
                Err(other) => return Err(other),
            }
        }
    }

    /// Calls the model until it returns a parseable JSON object, feeding the
    /// parse error back as a corrective user message between rounds.
    pub fn complete_json(
        &self,
        phase: Phase,
        req: &ChatRequest,
        max_rounds: usize,
    ) -> Result<Value, BackendError> {
        let max_rounds = max_rounds.max(1);
        let mut req = req.clone();
        let mut last_raw = String::new();
        for round in 1..=max_rounds {
            let resp = self.complete(phase, &req)?;
            match extract_json_object(&resp.content) {
                Ok(value) => return Ok(value),
                Err(err) => {
                    last_raw = resp.content.clone();
                    if round < max_rounds {
                        req.messages.push(Message::assistant(resp.content));
                        req.messages.push(Message::user(format!(
                            "Your previous output was not valid JSON: {err}. Respond ONLY with the JSON object."
                        )));
                    }
                }
            }
        }
        Err(BackendError::MalformedOutput { rounds: max_rounds, last_raw })
    }
}

/// Rough token count: runs of alphanumerics plus individual punctuation marks.
/// Deterministic and tokenizer-agnostic; only used for reports and simulated
/// backends.
pub fn approx_tokens(text: &str) -> u64 {
    let mut count = 0;
    let mut in_word = false;
    for ch in text.chars() {
        if ch.is_alphanumeric() || ch == '_' {
            if !in_word {
                count += 1;
                in_word = true;
            }
        } else {
            in_word = false;
            if !ch.is_whitespace() {
                count += 1;
            }
        }
    }
    count
}
