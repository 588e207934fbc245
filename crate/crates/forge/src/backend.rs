//! Model-backend abstraction: an OpenAI-compatible HTTP client, a scripted
//! mock for tests, and a deterministic request-keyed mock for pipeline runs.
//!
//! All callers go through [`Client`], which owns retry, backoff, and the
//! per-backend concurrency limit.

use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Env var holding the API credential for HTTP backends.
pub const API_KEY_ENV: &str = "FORGE_API_KEY";
/// Env var overriding the endpoint base URL for HTTP backends.
pub const BASE_URL_ENV: &str = "FORGE_BASE_URL";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GenerationRequest {
    pub system_prompt: Option<String>,
    pub user_prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub stop: Option<Vec<String>>,
}

impl GenerationRequest {
    pub fn new(user_prompt: impl Into<String>) -> Self {
        Self {
            system_prompt: None,
            user_prompt: user_prompt.into(),
            temperature: 0.0,
            max_tokens: 1024,
            stop: None,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.user_prompt.is_empty() {
            return Err(BackendError::InvalidRequest("empty user_prompt".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(BackendError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GenerationResponse {
    pub text: String,
    /// Attempts made, including retries. Always >= 1.
    pub request_count: u32,
    pub latency: Duration,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("http status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("scripted backend exhausted after {calls} calls")]
    ScriptExhausted { calls: usize },
    #[error("unparseable backend response: {0}")]
    InvalidResponse(String),
    #[error("retries exhausted after {attempts} attempts: {last}")]
    RetriesExhausted {
        attempts: u32,
        last: Box<BackendError>,
        attempt_log: Vec<String>,
    },
}

impl BackendError {
    /// 429 and 5xx are retryable; other HTTP statuses are terminal.
    /// Transport failures are retryable.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Http { status, .. } => *status == 429 || (500..600).contains(status),
            BackendError::Transport(_) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff: Duration,
    pub backoff_factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_backoff: Duration::from_secs(1),
            backoff_factor: 2.0,
        }
    }
}

impl RetryPolicy {
    /// Backoff before retry k (0-based): base * factor^k.
    pub fn backoff_for(&self, retry_index: u32) -> Duration {
        let secs = self.base_backoff.as_secs_f64() * self.backoff_factor.powi(retry_index as i32);
        Duration::from_secs_f64(secs)
    }
}

/// Sleep source, swappable for a fake in tests.
pub trait Clock: Send + Sync {
    fn sleep(&self, d: Duration);
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Records requested sleeps without blocking.
#[derive(Default)]
pub struct FakeClock {
    slept: Mutex<Vec<Duration>>,
}

impl FakeClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn slept(&self) -> Vec<Duration> {
        self.slept.lock().unwrap().clone()
    }
}

impl Clock for FakeClock {
    fn sleep(&self, d: Duration) {
        self.slept.lock().unwrap().push(d);
    }
}

/// One raw model invocation; retry and limiting live in [`Client`].
pub trait ModelBackend: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError>;
    fn id(&self) -> String;
}

/// Counting semaphore bounding in-flight requests per backend.
struct Limiter {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Limiter {
    fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) {
        let mut n = self.permits.lock().unwrap();
        while *n == 0 {
            n = self.cv.wait(n).unwrap();
        }
        *n -= 1;
    }

    fn release(&self) {
        *self.permits.lock().unwrap() += 1;
        self.cv.notify_one();
    }
}

pub const DEFAULT_CONCURRENCY: usize = 8;

/// A shareable handle to one backend plus its retry and concurrency policy.
#[derive(Clone)]
pub struct Client {
    backend: Arc<dyn ModelBackend>,
    policy: RetryPolicy,
    clock: Arc<dyn Clock>,
    limiter: Arc<Limiter>,
}

impl Client {
    pub fn new(backend: Arc<dyn ModelBackend>) -> Self {
        Self::with_policy(backend, RetryPolicy::default(), DEFAULT_CONCURRENCY)
    }

    pub fn with_policy(
        backend: Arc<dyn ModelBackend>,
        policy: RetryPolicy,
        concurrency: usize,
    ) -> Self {
        Self {
            backend,
            policy,
            clock: Arc::new(SystemClock),
            limiter: Arc::new(Limiter::new(concurrency)),
        }
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn backend_id(&self) -> String {
        self.backend.id()
    }

    /// Run one generation, retrying retryable failures per the policy.
    /// Terminal errors are never retried.
    pub fn complete(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        request.validate()?;
        self.limiter.acquire();
        let result = self.complete_inner(request);
        self.limiter.release();
        result
    }

    fn complete_inner(
        &self,
        request: &GenerationRequest,
    ) -> Result<GenerationResponse, BackendError> {
        let start = Instant::now();
        let mut attempt_log = Vec::new();
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            match self.backend.generate(request) {
                Ok(text) => {
                    return Ok(GenerationResponse {
                        text,
                        request_count: attempt,
                        latency: start.elapsed(),
                    })
                }
                Err(err) => {
                    attempt_log.push(format!("attempt {attempt}: {err}"));
                    if !err.is_retryable() || attempt >= self.policy.max_attempts {
                        if attempt > 1 || (err.is_retryable() && attempt >= self.policy.max_attempts)
                        {
                            return Err(BackendError::RetriesExhausted {
                                attempts: attempt,
                                last: Box::new(err),
                                attempt_log,
                            });
                        }
                        return Err(err);
                    }
                    self.clock.sleep(self.policy.backoff_for(attempt - 1));
                }
            }
        }
    }
}

/// One scripted step: a canned response or a canned failure.
#[derive(Debug, Clone)]
pub enum ScriptStep {
    Text(String),
    HttpError(u16),
    TransportError(String),
}

/// Deterministic replay backend. Records every request verbatim so tests can
/// assert on call counts and prompt contents.
pub struct ScriptedBackend {
    script: Mutex<VecDeque<ScriptStep>>,
    recorded: Mutex<Vec<GenerationRequest>>,
    calls: Mutex<usize>,
}

impl ScriptedBackend {
    pub fn new(steps: Vec<ScriptStep>) -> Arc<Self> {
        Arc::new(Self {
            script: Mutex::new(steps.into()),
            recorded: Mutex::new(Vec::new()),
            calls: Mutex::new(0),
        })
    }

    pub fn recorded_requests(&self) -> Vec<GenerationRequest> {
        self.recorded.lock().unwrap().clone()
    }

    pub fn call_count(&self) -> usize {
        *self.calls.lock().unwrap()
    }
}

impl ModelBackend for ScriptedBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        self.recorded.lock().unwrap().push(request.clone());
        let mut calls = self.calls.lock().unwrap();
        *calls += 1;
        match self.script.lock().unwrap().pop_front() {
            Some(ScriptStep::Text(t)) => Ok(t),
            Some(ScriptStep::HttpError(status)) => Err(BackendError::Http {
                status,
                body: "scripted error".into(),
            }),
            Some(ScriptStep::TransportError(msg)) => Err(BackendError::Transport(msg)),
            None => Err(BackendError::ScriptExhausted { calls: *calls }),
        }
    }

    fn id(&self) -> String {
        "scripted".into()
    }
}

/// Scripted backend replaying `script` responses in order.
pub fn make_scripted_backend(script: Vec<&str>) -> Arc<ScriptedBackend> {
    ScriptedBackend::new(script.into_iter().map(|s| ScriptStep::Text(s.into())).collect())
}

/// OpenAI-compatible chat-completions client.
///
/// POSTs `{base_url}/v1/chat/completions` and reads
/// `choices[0].message.content`. Credentials come only from `FORGE_API_KEY`.
pub struct HttpBackend {
    base_url: String,
    model: String,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        let base_url = std::env::var(BASE_URL_ENV).unwrap_or_else(|_| base_url.into());
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.into(),
            api_key: std::env::var(API_KEY_ENV).ok(),
            http: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(120))
                .build()
                .expect("http client"),
        }
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    stop: Option<&'a Vec<String>>,
}

impl ModelBackend for HttpBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        let mut messages = Vec::new();
        if let Some(system) = &request.system_prompt {
            messages.push(ChatMessage { role: "system", content: system });
        }
        messages.push(ChatMessage { role: "user", content: &request.user_prompt });
        let body = ChatRequest {
            model: &self.model,
            messages,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
            stop: request.stop.as_ref(),
        };
        let url = format!("{}/v1/chat/completions", self.base_url);
        let mut req = self.http.post(&url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .text()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(BackendError::Http { status, body: text });
        }
        let json: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| BackendError::InvalidResponse(e.to_string()))?;
        json["choices"][0]["message"]["content"]
            .as_str()
            .map(|s| s.to_string())
            .ok_or_else(|| {
                BackendError::InvalidResponse("missing choices[0].message.content".into())
            })
    }

    fn id(&self) -> String {
        format!("http:{}", self.model)
    }
}
