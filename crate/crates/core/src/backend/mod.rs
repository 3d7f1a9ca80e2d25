//! Uniform text-generation interface.
//!
//! Three implementations: [`HttpBackend`] speaks the de-facto
//! chat-completions JSON convention against a configurable endpoint,
//! [`ScriptedBackend`] replays canned completions keyed by provenance tags,
//! and [`StochasticBackend`] simulates a respondent whose success
//! probability depends on the iteration context. All backends are safe for
//! concurrent `generate` calls.

mod http;
mod scripted;
mod stochastic;

pub use http::{HttpBackend, HttpConfig};
pub use scripted::{ScriptEntry, ScriptedBackend};
pub use stochastic::{RespondentContext, RespondentModel, StochasticBackend};

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("rate limited after {attempts} attempt(s){}", retry_after.map(|d| format!(", retry after {}s", d.as_secs())).unwrap_or_default())]
    RateLimited {
        retry_after: Option<Duration>,
        attempts: u32,
    },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("request budget exceeded ({used} of {limit} calls used)")]
    BudgetExceeded { used: u64, limit: u64 },
    #[error("no script entry for (task '{task_id}', iteration {iteration}, prompt '{prompt_id}')")]
    ScriptMiss {
        task_id: String,
        iteration: u32,
        prompt_id: String,
    },
    #[error("invalid respondent model: {0}")]
    ModelConfig(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("script error: {0}")]
    Script(String),
}

/// Decoding parameters. Defaults follow the evaluated configuration:
/// temperature 0.7, top-p 0.2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    /// Opaque vendor passthrough; serialized into the request body verbatim
    /// when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thinking_enabled: Option<bool>,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            temperature: 0.7,
            top_p: 0.2,
            max_tokens: 8192,
            thinking_enabled: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }
}

/// Provenance tags carried on every request. Scripted and stochastic
/// backends key their behavior off these; the network backend ignores them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestTags {
    pub task_id: String,
    pub iteration: u32,
    pub prompt_id: String,
    pub strategy: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenRequest {
    pub messages: Vec<ChatMessage>,
    pub params: GenParams,
    pub tags: RequestTags,
}

impl GenRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if !self.messages.iter().any(|m| m.role == Role::User) {
            return Err(BackendError::InvalidRequest(
                "request has no user message".to_string(),
            ));
        }
        for m in &self.messages {
            if matches!(m.role, Role::User | Role::System) && m.content.is_empty() {
                return Err(BackendError::InvalidRequest(format!(
                    "{:?} message has empty content",
                    m.role
                )));
            }
        }
        Ok(())
    }

    /// Content of the last user message.
    pub fn last_user_content(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct GenResult {
    pub text: String,
    pub backend_id: String,
    pub latency: Duration,
    pub attempt_count: u32,
}

/// A text-generation endpoint. Implementations must be safe for concurrent
/// calls; the engine issues up to `parallelism` requests at a time.
pub trait Backend: Send + Sync {
    fn id(&self) -> &str;

    fn generate(&self, request: &GenRequest) -> Result<GenResult, BackendError>;
}

/// Shared per-run request cap. Every generation call is admitted through
/// the budget before it reaches a backend.
#[derive(Debug)]
pub struct RequestBudget {
    limit: u64,
    used: AtomicU64,
}

impl RequestBudget {
    pub fn new(limit: u64) -> Self {
        RequestBudget {
            limit,
            used: AtomicU64::new(0),
        }
    }

    /// Default cap for a comparison run: per (task, strategy), one baseline
    /// call plus up to ten candidates per iteration, with 10% slack for
    /// ensembler calls and retries of the cap itself.
    pub fn default_limit(n_tasks: usize, n_strategies: usize, max_iterations: usize) -> u64 {
        let per_run = 1 + max_iterations as u64 * 10;
        let base = n_tasks as u64 * n_strategies.max(1) as u64 * per_run;
        base + base.div_ceil(10)
    }

    pub fn admit(&self) -> Result<(), BackendError> {
        let prev = self.used.fetch_add(1, Ordering::SeqCst);
        if prev >= self.limit {
            self.used.fetch_sub(1, Ordering::SeqCst);
            return Err(BackendError::BudgetExceeded {
                used: prev,
                limit: self.limit,
            });
        }
        Ok(())
    }

    pub fn used(&self) -> u64 {
        self.used.load(Ordering::SeqCst)
    }

    pub fn limit(&self) -> u64 {
        self.limit
    }

    pub fn exhausted(&self) -> bool {
        self.used() >= self.limit
    }
}

/// Wraps a backend with a shared request budget.
pub struct BudgetedBackend<B> {
    inner: B,
    budget: std::sync::Arc<RequestBudget>,
}

impl<B: Backend> BudgetedBackend<B> {
    pub fn new(inner: B, budget: std::sync::Arc<RequestBudget>) -> Self {
        BudgetedBackend { inner, budget }
    }

    pub fn budget(&self) -> &RequestBudget {
        &self.budget
    }
}

impl<B: Backend> Backend for BudgetedBackend<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn generate(&self, request: &GenRequest) -> Result<GenResult, BackendError> {
        self.budget.admit()?;
        self.inner.generate(request)
    }
}

impl Backend for std::sync::Arc<dyn Backend> {
    fn id(&self) -> &str {
        self.as_ref().id()
    }

    fn generate(&self, request: &GenRequest) -> Result<GenResult, BackendError> {
        self.as_ref().generate(request)
    }
}
