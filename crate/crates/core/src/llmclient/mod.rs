//! Model access: one [`Client`] type over pluggable [`Backend`]s, with retries,
//! rate limiting and per-call latency capture.

mod clock;
mod http;
mod mock;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use clock::{Clock, ManualClock, RateLimiter, Stopwatch, SystemClock};
pub use http::{parse_response, request_body, HttpBackend};
pub use mock::{script_mock, FailureKind, Matcher, MockBackend, MockScript, Response, Rule};

/// Sampling temperature for evaluation and classification calls.
pub const EVAL_TEMPERATURE: f64 = 0.0;
/// Sampling temperature for generation calls.
pub const GENERATION_TEMPERATURE: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message {
            role: Role::System,
            content: content.into(),
        }
    }

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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl ChatRequest {
    pub fn new(
        model: impl Into<String>,
        messages: Vec<Message>,
        temperature: f64,
    ) -> Result<Self, ClientError> {
        let req = ChatRequest {
            model: model.into(),
            messages,
            temperature,
            max_tokens: None,
        };
        req.validate()?;
        Ok(req)
    }

    /// Single user message at temperature 0.
    pub fn user(model: impl Into<String>, content: impl Into<String>) -> Self {
        ChatRequest {
            model: model.into(),
            messages: vec![Message::user(content)],
            temperature: EVAL_TEMPERATURE,
            max_tokens: None,
        }
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        if self.messages.is_empty() {
            return Err(ClientError::InvalidRequest("no messages".into()));
        }
        if self.messages.last().map(|m| m.role) != Some(Role::User) {
            return Err(ClientError::InvalidRequest("last message must be from the user".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(ClientError::InvalidRequest(format!(
                "temperature {} must be a finite value >= 0",
                self.temperature
            )));
        }
        Ok(())
    }

    /// All message contents joined by newlines; what mock matchers see.
    pub fn prompt_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub request: ChatRequest,
    pub response_text: String,
    /// Seconds for the whole call, retries and backoff included.
    pub latency: f64,
    pub attempt_count: u32,
    pub backend_id: String,
}

/// Failure of a single backend attempt.
#[derive(Debug, Clone, Error)]
pub enum TransportError {
    #[error("transient: {0}")]
    Transient(String),
    #[error("credentials rejected: {0}")]
    Auth(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("request rejected with HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("no mock rule matched and no default reply is set")]
    NoRuleMatched,
}

#[derive(Debug, Clone, Error)]
pub enum ClientError {
    #[error("gave up after {attempts} attempt(s): {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("request rejected with HTTP {status}")]
    Rejected { status: u16 },
    #[error("no mock rule matched")]
    NoRuleMatched,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend config: {0}")]
    Config(String),
}

impl ClientError {
    pub fn category(&self) -> &'static str {
        match self {
            ClientError::Exhausted { .. } => "exhausted",
            ClientError::Auth(_) => "auth",
            ClientError::Malformed(_) => "malformed",
            ClientError::Rejected { .. } => "rejected",
            ClientError::NoRuleMatched => "no_rule_matched",
            ClientError::InvalidRequest(_) => "invalid_request",
            ClientError::Config(_) => "config",
        }
    }
}

/// A failed call, with how many attempts and how long it took.
#[derive(Debug, Clone, Error)]
#[error("{error} (backend `{backend_id}`, {attempts} attempt(s), {latency:.3}s)")]
pub struct CallError {
    #[source]
    pub error: ClientError,
    pub attempts: u32,
    pub latency: f64,
    pub backend_id: String,
}

pub trait Backend: Send + Sync {
    fn id(&self) -> &str;
    fn model(&self) -> &str;
    /// One attempt. Any waiting must go through `sw` so latency is accounted.
    fn send(&self, request: &ChatRequest, sw: &mut Stopwatch<'_>) -> Result<String, TransportError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Total attempts, including the first.
    pub max_attempts: u32,
    pub base_delay: f64,
    pub factor: f64,
    /// Relative jitter; 0.2 means ±20%.
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay: 1.0,
            factor: 2.0,
            jitter: 0.2,
        }
    }
}

impl RetryPolicy {
    pub fn with_attempts(max_attempts: u32) -> Self {
        RetryPolicy {
            max_attempts: max_attempts.max(1),
            ..Self::default()
        }
    }

    /// Nominal delay before retry number `retry` (1-based), without jitter.
    pub fn nominal_delay(&self, retry: u32) -> f64 {
        self.base_delay * self.factor.powi(retry as i32 - 1)
    }
}

/// Callable handle over a backend. Cheap to clone; clones share the rate limiter.
#[derive(Clone)]
pub struct Client {
    backend: Arc<dyn Backend>,
    clock: Arc<dyn Clock>,
    retry: RetryPolicy,
    limiter: Option<Arc<RateLimiter>>,
    jitter_rng: Arc<Mutex<ChaCha8Rng>>,
}

impl std::fmt::Debug for Client {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Client")
            .field("backend", &self.backend.id())
            .field("retry", &self.retry)
            .field("rate_limited", &self.limiter.is_some())
            .finish()
    }
}

impl Client {
    pub fn new(backend: Arc<dyn Backend>, clock: Arc<dyn Clock>) -> Self {
        Client {
            backend,
            clock,
            retry: RetryPolicy::default(),
            limiter: None,
            jitter_rng: Arc::new(Mutex::new(ChaCha8Rng::seed_from_u64(0))),
        }
    }

    /// Client over a mock backend on a fresh synthetic clock.
    pub fn mock(backend: Arc<MockBackend>) -> Self {
        Self::new(backend, Arc::new(ManualClock::new()))
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_rate_limit(mut self, per_second: f64) -> Self {
        self.limiter = RateLimiter::per_second(per_second).map(Arc::new);
        self
    }

    pub fn with_jitter_seed(mut self, seed: u64) -> Self {
        self.jitter_rng = Arc::new(Mutex::new(ChaCha8Rng::seed_from_u64(seed)));
        self
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    pub fn model(&self) -> &str {
        self.backend.model()
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        self.retry
    }

    /// Runs `request`, retrying transient failures with exponential backoff.
    pub fn complete(&self, request: &ChatRequest) -> Result<ChatExchange, CallError> {
        let mut sw = Stopwatch::start(self.clock.as_ref());
        let fail = |error: ClientError, attempts: u32, sw: &Stopwatch<'_>| CallError {
            error,
            attempts,
            latency: sw.elapsed(),
            backend_id: self.backend.id().to_string(),
        };
        if let Err(e) = request.validate() {
            return Err(fail(e, 0, &sw));
        }

        let max_attempts = self.retry.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            if let Some(limiter) = &self.limiter {
                limiter.acquire(&mut sw);
            }
            match self.backend.send(request, &mut sw) {
                Ok(text) => {
                    return Ok(ChatExchange {
                        request: request.clone(),
                        response_text: text,
                        latency: sw.elapsed(),
                        attempt_count: attempt,
                        backend_id: self.backend.id().to_string(),
                    })
                }
                Err(TransportError::Transient(msg)) => {
                    if attempt >= max_attempts {
                        return Err(fail(
                            ClientError::Exhausted {
                                attempts: attempt,
                                last: msg,
                            },
                            attempt,
                            &sw,
                        ));
                    }
                    let spread = {
                        let mut rng = self.jitter_rng.lock().unwrap();
                        rng.gen_range(-1.0..=1.0)
                    };
                    let delay = self.retry.nominal_delay(attempt) * (1.0 + self.retry.jitter * spread);
                    sw.sleep(delay.max(0.0));
                }
                Err(TransportError::Auth(msg)) => return Err(fail(ClientError::Auth(msg), attempt, &sw)),
                Err(TransportError::Malformed(msg)) => {
                    return Err(fail(ClientError::Malformed(msg), attempt, &sw))
                }
                Err(TransportError::Rejected { status, .. }) => {
                    return Err(fail(ClientError::Rejected { status }, attempt, &sw))
                }
                Err(TransportError::NoRuleMatched) => {
                    return Err(fail(ClientError::NoRuleMatched, attempt, &sw))
                }
            }
        }
    }

    /// Convenience wrapper: optional system prompt plus one user message.
    pub fn ask(
        &self,
        system: Option<&str>,
        user: &str,
        temperature: f64,
    ) -> Result<ChatExchange, CallError> {
        let mut messages = Vec::with_capacity(2);
        if let Some(s) = system {
            messages.push(Message::system(s));
        }
        messages.push(Message::user(user));
        let request = ChatRequest {
            model: self.model().to_string(),
            messages,
            temperature,
            max_tokens: None,
        };
        self.complete(&request)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Openai,
    Mock,
}

/// One `[[backend]]` table of the pipeline config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub id: String,
    #[serde(default)]
    pub kind: BackendKind,
    #[serde(default)]
    pub base_url: String,
    #[serde(default = "default_path")]
    pub path: String,
    #[serde(default)]
    pub model: String,
    #[serde(default)]
    pub rate_limit_per_s: f64,
    #[serde(default = "default_retry_limit")]
    pub retry_limit: u32,
    /// Defaults to `<ID>_API_KEY`.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    /// Mock script file, for `kind = "mock"`.
    #[serde(default)]
    pub script: Option<String>,
}

fn default_path() -> String {
    "/chat/completions".into()
}

fn default_retry_limit() -> u32 {
    3
}

fn default_timeout() -> f64 {
    120.0
}

impl BackendConfig {
    pub fn api_key_var(&self) -> String {
        self.api_key_env.clone().unwrap_or_else(|| {
            let id: String = self
                .id
                .chars()
                .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_uppercase() } else { '_' })
                .collect();
            format!("{id}_API_KEY")
        })
    }

    /// Builds a client. Mock scripts are resolved relative to `base_dir`.
    /// Mocks run on a synthetic clock; live backends on the system clock.
    pub fn build(&self, base_dir: &Path, jitter_seed: u64) -> Result<Client, ClientError> {
        let (backend, clock): (Arc<dyn Backend>, Arc<dyn Clock>) = match self.kind {
            BackendKind::Mock => {
                let script_path = self
                    .script
                    .as_ref()
                    .ok_or_else(|| ClientError::Config(format!("mock backend `{}` has no script", self.id)))?;
                let script = MockScript::load(base_dir.join(script_path)).map_err(ClientError::Config)?;
                let mock = script_mock(self.id.clone(), script).map_err(ClientError::Config)?;
                (Arc::new(mock), Arc::new(ManualClock::new()))
            }
            BackendKind::Openai => {
                if self.base_url.is_empty() || self.model.is_empty() {
                    return Err(ClientError::Config(format!(
                        "backend `{}` needs base_url and model",
                        self.id
                    )));
                }
                let key = std::env::var(self.api_key_var()).ok();
                let http = HttpBackend::new(
                    self.id.clone(),
                    &self.base_url,
                    &self.path,
                    self.model.clone(),
                    key,
                    Duration::from_secs_f64(self.timeout_s.max(1.0)),
                )
                .map_err(|e| ClientError::Config(e.to_string()))?;
                (Arc::new(http), Arc::new(SystemClock::new()))
            }
        };
        Ok(Client::new(backend, clock)
            .with_retry(RetryPolicy::with_attempts(self.retry_limit))
            .with_rate_limit(self.rate_limit_per_s)
            .with_jitter_seed(jitter_seed))
    }
}

/// Clients by backend id.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    clients: BTreeMap<String, Client>,
}

impl Registry {
    pub fn from_configs(
        configs: &[BackendConfig],
        base_dir: &Path,
        seed: u64,
    ) -> Result<Self, ClientError> {
        let mut clients = BTreeMap::new();
        for c in configs {
            if clients.insert(c.id.clone(), c.build(base_dir, seed)?).is_some() {
                return Err(ClientError::Config(format!("duplicate backend id `{}`", c.id)));
            }
        }
        Ok(Registry { clients })
    }

    pub fn insert(&mut self, client: Client) {
        self.clients.insert(client.backend_id().to_string(), client);
    }

    pub fn get(&self, id: &str) -> Result<&Client, ClientError> {
        self.clients
            .get(id)
            .ok_or_else(|| ClientError::Config(format!("unknown backend `{id}`")))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.clients.keys().map(String::as_str)
    }
}
