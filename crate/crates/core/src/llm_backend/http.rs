//! Live chat-completions client.
//!
//! Wire shape: POST `{base_url}/chat/completions` with `model`, a single
//! user message, `temperature` and `max_tokens`; the reply text is
//! `choices[0].message.content`, token counts come from `usage`.

use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Deserialize;
use serde_json::json;

use super::{
    Backend, BackendError, Clock, CompletionRequest, CompletionResponse, ErrorClass, RateLimiter, RetryPolicy,
    SystemClock, UsageStats,
};

pub const API_KEY_ENV: &str = "HCQA_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("timed out: {0}")]
    Timeout(String),
    #[error("connection failed: {0}")]
    Connect(String),
    #[error("transport error: {0}")]
    Other(String),
}

/// One HTTP POST. Status codes are returned, not raised.
pub trait Transport: Send + Sync {
    fn post(&self, url: &str, headers: &[(&str, String)], body: &str) -> Result<HttpReply, TransportError>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build();
        UreqTransport { agent: ureq::Agent::new_with_config(config) }
    }
}

impl Transport for UreqTransport {
    fn post(&self, url: &str, headers: &[(&str, String)], body: &str) -> Result<HttpReply, TransportError> {
        let mut req = self.agent.post(url);
        for (k, v) in headers {
            req = req.header(*k, v.as_str());
        }
        let mut resp = req.send(body).map_err(classify_ureq)?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(classify_ureq)?;
        Ok(HttpReply { status, body })
    }
}

fn classify_ureq(e: ureq::Error) -> TransportError {
    match e {
        ureq::Error::Timeout(_) => TransportError::Timeout(e.to_string()),
        ureq::Error::HostNotFound | ureq::Error::ConnectionFailed => TransportError::Connect(e.to_string()),
        ureq::Error::Io(ref io) => match io.kind() {
            std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock => TransportError::Timeout(e.to_string()),
            std::io::ErrorKind::ConnectionRefused
            | std::io::ErrorKind::ConnectionReset
            | std::io::ErrorKind::ConnectionAborted
            | std::io::ErrorKind::NotConnected => TransportError::Connect(e.to_string()),
            _ => TransportError::Other(e.to_string()),
        },
        other => TransportError::Other(other.to_string()),
    }
}

fn classify_status(status: u16) -> ErrorClass {
    match status {
        408 => ErrorClass::Timeout,
        429 => ErrorClass::RateLimited,
        401 | 403 => ErrorClass::Auth,
        500..=599 => ErrorClass::Server5xx,
        400..=499 => ErrorClass::ClientError,
        _ => ErrorClass::MalformedResponse,
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

pub struct LiveBackend {
    endpoint: String,
    api_key: String,
    transport: Arc<dyn Transport>,
    policy: RetryPolicy,
    clock: Arc<dyn Clock>,
    limiter: Option<Arc<RateLimiter>>,
    rng: Mutex<StdRng>,
}

impl LiveBackend {
    pub fn new(base_url: &str, api_key: impl Into<String>, transport: Arc<dyn Transport>) -> Self {
        LiveBackend {
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key: api_key.into(),
            transport,
            policy: RetryPolicy::default(),
            clock: Arc::new(SystemClock::new()),
            limiter: None,
            rng: Mutex::new(StdRng::from_os_rng()),
        }
    }

    /// Reads the bearer token from `HCQA_API_KEY`.
    pub fn from_env(base_url: &str, transport: Arc<dyn Transport>) -> Result<Self, BackendError> {
        match std::env::var(API_KEY_ENV) {
            Ok(key) if !key.trim().is_empty() => Ok(Self::new(base_url, key, transport)),
            _ => Err(BackendError::Setup(format!("{API_KEY_ENV} is not set"))),
        }
    }

    pub fn with_policy(mut self, policy: RetryPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_limiter(mut self, limiter: Arc<RateLimiter>) -> Self {
        self.limiter = Some(limiter);
        self
    }

    pub fn with_seed(self, seed: u64) -> Self {
        *self.rng.lock().unwrap() = StdRng::seed_from_u64(seed);
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn request_body(req: &CompletionRequest) -> String {
        json!({
            "model": req.model_name,
            "messages": [{"role": "user", "content": req.prompt.text}],
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        })
        .to_string()
    }

    fn attempt(&self, req: &CompletionRequest, body: &str) -> Result<(String, UsageStats), (ErrorClass, String)> {
        if let Some(limiter) = &self.limiter {
            limiter.acquire(req.prompt.est_tokens + req.max_output_tokens as u64);
        }
        let headers = [
            ("Authorization", format!("Bearer {}", self.api_key)),
            ("Content-Type", "application/json".to_string()),
        ];
        let reply = self.transport.post(&self.endpoint, &headers, body).map_err(|e| match e {
            TransportError::Timeout(m) => (ErrorClass::Timeout, m),
            TransportError::Connect(m) => (ErrorClass::Connection, m),
            TransportError::Other(m) => (ErrorClass::Connection, m),
        })?;
        if !(200..300).contains(&reply.status) {
            let mut snippet = reply.body;
            snippet.truncate(200);
            return Err((classify_status(reply.status), format!("HTTP {}: {snippet}", reply.status)));
        }
        let parsed: ChatResponse = serde_json::from_str(&reply.body)
            .map_err(|e| (ErrorClass::MalformedResponse, format!("bad response body: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or((ErrorClass::MalformedResponse, "response has no choices".to_string()))?;
        let text = choice.message.content.unwrap_or_default();
        let usage = match parsed.usage {
            Some(WireUsage { prompt_tokens: Some(p), completion_tokens: Some(c) }) => {
                UsageStats { prompt_tokens: p, completion_tokens: c, estimated: false }
            }
            _ => UsageStats::estimate(&req.prompt, &text),
        };
        Ok((text, usage))
    }
}

impl Backend for LiveBackend {
    fn id(&self) -> String {
        format!("live:{}", self.endpoint)
    }

    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let body = Self::request_body(req);
        let started = Instant::now();
        let jitter = || self.rng.lock().unwrap_or_else(|p| p.into_inner()).random::<f64>();
        let ((text, usage), attempts) = self.policy.run(self.clock.as_ref(), jitter, |_| self.attempt(req, &body))?;
        Ok(CompletionResponse {
            text,
            usage,
            backend_id: self.id(),
            latency_ms: started.elapsed().as_millis() as u64,
            attempts,
        })
    }
}
