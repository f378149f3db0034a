//! Completion backends: a live chat-completions client plus deterministic
//! scripted and record/replay backends for tests and offline runs.

mod clock;
mod http;
mod rate_limit;
mod record;
mod retry;
mod scripted;

use std::fmt;
use std::ops::AddAssign;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use clock::{Clock, SimClock, SystemClock};
pub use http::{HttpReply, LiveBackend, Transport, TransportError, UreqTransport, API_KEY_ENV};
pub use rate_limit::RateLimiter;
pub use record::{RecordLine, RecordMode, RecordReplayBackend};
pub use retry::RetryPolicy;
pub use scripted::{FnBackend, ScriptFile, ScriptedBackend};

use crate::digest::Digest;
use crate::prompting::{estimate_tokens, AssembledPrompt};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UsageStats {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Set when any count was estimated locally rather than reported.
    #[serde(default)]
    pub estimated: bool,
}

impl UsageStats {
    pub fn estimate(prompt: &AssembledPrompt, completion: &str) -> Self {
        UsageStats { prompt_tokens: prompt.est_tokens, completion_tokens: estimate_tokens(completion), estimated: true }
    }

    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

impl AddAssign for UsageStats {
    fn add_assign(&mut self, rhs: Self) {
        self.prompt_tokens += rhs.prompt_tokens;
        self.completion_tokens += rhs.completion_tokens;
        self.estimated |= rhs.estimated;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionRequest {
    pub model_name: String,
    pub prompt: AssembledPrompt,
    pub temperature: f64,
    pub max_output_tokens: u32,
    request_digest: Digest,
}

impl CompletionRequest {
    pub fn new(model_name: impl Into<String>, prompt: AssembledPrompt, temperature: f64, max_output_tokens: u32) -> Self {
        let model_name = model_name.into();
        // -0.0 and 0.0 must hash alike
        let temperature = if temperature == 0.0 { 0.0 } else { temperature };
        let request_digest = Digest::of(canonical_form(&model_name, &prompt.content_digest, temperature, max_output_tokens));
        CompletionRequest { model_name, prompt, temperature, max_output_tokens, request_digest }
    }

    pub fn digest(&self) -> Digest {
        self.request_digest
    }

    /// The exact byte string hashed into the request digest.
    pub fn canonical(&self) -> String {
        canonical_form(&self.model_name, &self.prompt.content_digest, self.temperature, self.max_output_tokens)
    }
}

fn canonical_form(model: &str, prompt: &Digest, temperature: f64, max_tokens: u32) -> String {
    serde_json::to_string(&(model, prompt.to_hex(), temperature, max_tokens)).expect("tuple serializes")
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResponse {
    pub text: String,
    pub usage: UsageStats,
    pub backend_id: String,
    pub latency_ms: u64,
    /// Transport attempts spent on this response (0 when served locally).
    pub attempts: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    Timeout,
    RateLimited,
    Server5xx,
    Connection,
    Auth,
    ClientError,
    MalformedResponse,
}

impl fmt::Display for ErrorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ErrorClass::Timeout => "timeout",
            ErrorClass::RateLimited => "rate_limited",
            ErrorClass::Server5xx => "server_5xx",
            ErrorClass::Connection => "connection",
            ErrorClass::Auth => "auth",
            ErrorClass::ClientError => "client_error",
            ErrorClass::MalformedResponse => "malformed_response",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("{class} after {attempts} attempt(s): {cause}")]
    Request { class: ErrorClass, attempts: u32, cause: String },
    #[error("no scripted response for request {digest}")]
    UnscriptedRequest { digest: Digest },
    #[error("replay store has no response for request {digest}")]
    ReplayMiss { digest: Digest },
    #[error("backend store: {0}")]
    Store(String),
    #[error("backend setup: {0}")]
    Setup(String),
}

impl BackendError {
    pub fn class(&self) -> Option<ErrorClass> {
        match self {
            BackendError::Request { class, .. } => Some(*class),
            _ => None,
        }
    }

    pub fn attempts(&self) -> u32 {
        match self {
            BackendError::Request { attempts, .. } => *attempts,
            _ => 0,
        }
    }
}

/// Anything that can answer a completion request. Implementations must be
/// callable from many threads at once.
pub trait Backend: Send + Sync {
    fn id(&self) -> String;
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError>;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        (**self).complete(req)
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn id(&self) -> String {
        (**self).id()
    }

    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        (**self).complete(req)
    }
}

/// Counts calls that reach the wrapped backend.
pub struct CountingBackend<B> {
    inner: B,
    calls: AtomicUsize,
}

impl<B: Backend> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        CountingBackend { inner, calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::SeqCst);
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: Backend> Backend for CountingBackend<B> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(req)
    }
}
