//! Synchronous chat-completion gateway with pluggable transports.
//!
//! The [`Gateway`] owns everything between "I want a completion for this
//! request" and "here is the reply text": request identity (content-
//! addressed keys), a disk cache, duplicate-call coalescing, a sliding-
//! window rate limiter, retries with exponential backoff, and a token
//! budget. Transports are swappable: real HTTP, a scripted mock for tests,
//! or a record/replay transport for offline fixtures. Time is behind the
//! [`Clock`] trait so retry and rate-limit behavior is testable without
//! real sleeps.

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};

/// Chat roles on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

/// One chat message; `images` are paths to files attached to the message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<PathBuf>,
}

impl ChatMessage {
    pub fn system(text: impl Into<String>) -> ChatMessage {
        ChatMessage {
            role: Role::System,
            text: text.into(),
            images: Vec::new(),
        }
    }

    pub fn user(text: impl Into<String>) -> ChatMessage {
        ChatMessage {
            role: Role::User,
            text: text.into(),
            images: Vec::new(),
        }
    }

    pub fn user_with_images(text: impl Into<String>, images: Vec<PathBuf>) -> ChatMessage {
        ChatMessage {
            role: Role::User,
            text: text.into(),
            images,
        }
    }
}

/// Token accounting as reported by the endpoint.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl Usage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

/// A fully-specified completion request. The `request_key` is derived from
/// the content (model, temperature, messages, image bytes) when the
/// request is built, so equal content always coalesces and caches to the
/// same entry. `max_tokens` is deliberately not part of the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub request_key: String,
}

impl CompletionRequest {
    pub fn new(
        model: impl Into<String>,
        messages: Vec<ChatMessage>,
        temperature: f64,
        max_tokens: u32,
    ) -> Result<CompletionRequest> {
        let model = model.into();
        let request_key = compute_request_key(&model, temperature, &messages)?;
        Ok(CompletionRequest {
            model,
            messages,
            temperature,
            max_tokens,
            request_key,
        })
    }
}

/// Content-addressed request identity: SHA-256 over a canonical encoding
/// of model, temperature bits, and the ordered message list. Image
/// attachments contribute a digest of their bytes, so renaming a file does
/// not change the key but editing it does.
fn compute_request_key(model: &str, temperature: f64, messages: &[ChatMessage]) -> Result<String> {
    let mut hasher = Sha256::new();
    hasher.update(b"model\0");
    hasher.update(model.as_bytes());
    hasher.update(b"\0temperature\0");
    hasher.update(temperature.to_bits().to_be_bytes());
    for msg in messages {
        hasher.update(b"\0message\0");
        hasher.update(msg.role.as_str().as_bytes());
        hasher.update(b"\0");
        hasher.update(msg.text.as_bytes());
        for image in &msg.images {
            let bytes = fs::read(image)?;
            hasher.update(b"\0image\0");
            hasher.update(Sha256::digest(&bytes));
        }
    }
    Ok(hex::encode(hasher.finalize()))
}

/// What a transport hands back on success.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportReply {
    pub text: String,
    pub usage: Usage,
}

/// Transport-level failures. `Status` carries the HTTP status so the
/// gateway can classify it; anything else is a network-shaped error.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    Status { status: u16, body: String },
    Network(String),
}

/// A synchronous wire to a chat-completion endpoint. Implementations must
/// be shareable across the gateway's worker threads.
pub trait Transport: Send + Sync {
    fn send(&self, request: &CompletionRequest) -> std::result::Result<TransportReply, TransportError>;
}

/// Time source. Production code uses [`SystemClock`]; tests use
/// [`MockClock`] so rate limiting and backoff are observable instantly.
pub trait Clock: Send + Sync {
    fn now_millis(&self) -> u64;
    fn sleep_millis(&self, millis: u64);
}

pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> SystemClock {
        SystemClock {
            origin: Instant::now(),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        SystemClock::new()
    }
}

impl Clock for SystemClock {
    fn now_millis(&self) -> u64 {
        self.origin.elapsed().as_millis() as u64
    }

    fn sleep_millis(&self, millis: u64) {
        std::thread::sleep(Duration::from_millis(millis));
    }
}

/// Virtual clock: sleeping advances time instantly and every sleep is
/// recorded.
pub struct MockClock {
    now: Mutex<u64>,
    sleeps: Mutex<Vec<u64>>,
}

impl MockClock {
    pub fn new() -> MockClock {
        MockClock {
            now: Mutex::new(0),
            sleeps: Mutex::new(Vec::new()),
        }
    }

    pub fn sleeps(&self) -> Vec<u64> {
        self.sleeps.lock().unwrap().clone()
    }

    pub fn total_slept(&self) -> u64 {
        self.sleeps.lock().unwrap().iter().sum()
    }
}

impl Default for MockClock {
    fn default() -> Self {
        MockClock::new()
    }
}

impl Clock for MockClock {
    fn now_millis(&self) -> u64 {
        *self.now.lock().unwrap()
    }

    fn sleep_millis(&self, millis: u64) {
        *self.now.lock().unwrap() += millis;
        self.sleeps.lock().unwrap().push(millis);
    }
}

/// Sliding-window limiter: at most `limit` dispatches within any 1000 ms
/// window.
pub struct RateLimiter {
    limit: u32,
    window: Mutex<VecDeque<u64>>,
}

impl RateLimiter {
    pub fn new(limit: u32) -> RateLimiter {
        RateLimiter {
            limit: limit.max(1),
            window: Mutex::new(VecDeque::new()),
        }
    }

    /// Block (via the clock) until a dispatch slot is free, then claim it.
    pub fn acquire(&self, clock: &dyn Clock) {
        loop {
            let wait = {
                let now = clock.now_millis();
                let mut window = self.window.lock().unwrap();
                while let Some(&front) = window.front() {
                    if now.saturating_sub(front) >= 1000 {
                        window.pop_front();
                    } else {
                        break;
                    }
                }
                if (window.len() as u32) < self.limit {
                    window.push_back(now);
                    return;
                }
                // Entries still in the window satisfy front + 1000 > now.
                window.front().map(|&f| f + 1000 - now).unwrap_or(1)
            };
            clock.sleep_millis(wait.max(1));
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    request_key: String,
    model: String,
    text: String,
    prompt_tokens: u64,
    completion_tokens: u64,
    /// Network attempts it originally took to get this reply.
    attempts: u32,
}

/// One JSON file per request key. Corrupt or unreadable entries are
/// treated as misses so a damaged cache never blocks a run.
struct DiskCache {
    dir: PathBuf,
}

impl DiskCache {
    fn entry_path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    fn load(&self, key: &str) -> Option<CacheEntry> {
        let path = self.entry_path(key);
        let text = fs::read_to_string(&path).ok()?;
        match serde_json::from_str::<CacheEntry>(&text) {
            Ok(entry) if entry.request_key == key => Some(entry),
            _ => {
                log::warn!("ignoring corrupt cache entry at {}", path.display());
                None
            }
        }
    }

    fn store(&self, entry: &CacheEntry) {
        let write = || -> Result<()> {
            fs::create_dir_all(&self.dir)?;
            let body = serde_json::to_string_pretty(entry)?;
            fs::write(self.entry_path(&entry.request_key), body)?;
            Ok(())
        };
        if let Err(e) = write() {
            log::warn!("failed to write cache entry {}: {e}", entry.request_key);
        }
    }
}

/// Gateway behavior knobs.
#[derive(Debug, Clone)]
pub struct GatewayConfig {
    /// Retries after the first attempt, on 429/5xx only.
    pub max_retries: u32,
    pub backoff_initial_ms: u64,
    pub backoff_max_ms: u64,
    pub rate_limit_per_sec: Option<u32>,
    /// Hard cap on prompt+completion tokens spent through this gateway.
    pub max_total_tokens: Option<u64>,
    pub cache_dir: Option<PathBuf>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            max_retries: 3,
            backoff_initial_ms: 500,
            backoff_max_ms: 30_000,
            rate_limit_per_sec: None,
            max_total_tokens: None,
            cache_dir: None,
        }
    }
}

/// Outcome of one completion call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionResult {
    pub text: String,
    pub usage: Usage,
    /// True when served from the disk cache without touching the network.
    pub from_cache: bool,
    /// Network attempts behind this reply (the cached value on cache hits,
    /// so it is always at least 1).
    pub attempts: u32,
}

pub struct Gateway {
    transport: Arc<dyn Transport>,
    config: GatewayConfig,
    clock: Arc<dyn Clock>,
    limiter: Option<RateLimiter>,
    cache: Option<DiskCache>,
    prompt_tokens_used: AtomicU64,
    completion_tokens_used: AtomicU64,
    /// Per-request-key mutexes so identical in-flight requests coalesce:
    /// the second caller waits and then (with a cache) hits the cache
    /// instead of the network.
    key_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl Gateway {
    pub fn new(transport: Arc<dyn Transport>, config: GatewayConfig) -> Gateway {
        Gateway::with_clock(transport, config, Arc::new(SystemClock::new()))
    }

    pub fn with_clock(
        transport: Arc<dyn Transport>,
        config: GatewayConfig,
        clock: Arc<dyn Clock>,
    ) -> Gateway {
        let limiter = config.rate_limit_per_sec.map(RateLimiter::new);
        let cache = config
            .cache_dir
            .clone()
            .map(|dir| DiskCache { dir });
        Gateway {
            transport,
            config,
            clock,
            limiter,
            cache,
            prompt_tokens_used: AtomicU64::new(0),
            completion_tokens_used: AtomicU64::new(0),
            key_locks: Mutex::new(HashMap::new()),
        }
    }

    /// Tokens billed through this gateway instance (cache hits are free).
    pub fn tokens_used(&self) -> u64 {
        self.prompt_tokens_used.load(Ordering::Relaxed)
            + self.completion_tokens_used.load(Ordering::Relaxed)
    }

    pub fn usage(&self) -> Usage {
        Usage {
            prompt_tokens: self.prompt_tokens_used.load(Ordering::Relaxed),
            completion_tokens: self.completion_tokens_used.load(Ordering::Relaxed),
        }
    }

    fn key_lock(&self, key: &str) -> Arc<Mutex<()>> {
        let mut locks = self.key_locks.lock().unwrap();
        locks
            .entry(key.to_string())
            .or_insert_with(|| Arc::new(Mutex::new(())))
            .clone()
    }

    fn check_budget(&self) -> Result<()> {
        if let Some(cap) = self.config.max_total_tokens {
            let used = self.tokens_used();
            if used >= cap {
                return Err(CoreError::BudgetExceeded { used, cap });
            }
        }
        Ok(())
    }

    fn backoff_delay(&self, failed_attempt: u32) -> u64 {
        let factor = 1u64 << (failed_attempt - 1).min(16);
        (self.config.backoff_initial_ms.saturating_mul(factor)).min(self.config.backoff_max_ms)
    }

    /// Complete one request: cache lookup, then the retry loop. Retries
    /// apply to 429 and 5xx only; 401/403 fail immediately as
    /// `AUTH_FAILED`, everything else as `TRANSPORT_ERROR`.
    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult> {
        let lock = self.key_lock(&request.request_key);
        let _in_flight = lock.lock().unwrap();

        if let Some(cache) = &self.cache {
            if let Some(entry) = cache.load(&request.request_key) {
                return Ok(CompletionResult {
                    text: entry.text,
                    usage: Usage {
                        prompt_tokens: entry.prompt_tokens,
                        completion_tokens: entry.completion_tokens,
                    },
                    from_cache: true,
                    attempts: entry.attempts,
                });
            }
        }

        let mut attempt = 0u32;
        loop {
            attempt += 1;
            self.check_budget()?;
            if let Some(limiter) = &self.limiter {
                limiter.acquire(self.clock.as_ref());
            }
            match self.transport.send(request) {
                Ok(reply) => {
                    self.prompt_tokens_used
                        .fetch_add(reply.usage.prompt_tokens, Ordering::Relaxed);
                    self.completion_tokens_used
                        .fetch_add(reply.usage.completion_tokens, Ordering::Relaxed);
                    if let Some(cache) = &self.cache {
                        cache.store(&CacheEntry {
                            request_key: request.request_key.clone(),
                            model: request.model.clone(),
                            text: reply.text.clone(),
                            prompt_tokens: reply.usage.prompt_tokens,
                            completion_tokens: reply.usage.completion_tokens,
                            attempts: attempt,
                        });
                    }
                    return Ok(CompletionResult {
                        text: reply.text,
                        usage: reply.usage,
                        from_cache: false,
                        attempts: attempt,
                    });
                }
                Err(TransportError::Status { status, .. }) if status == 401 || status == 403 => {
                    return Err(CoreError::AuthFailed { status });
                }
                Err(TransportError::Status { status, body })
                    if status == 429 || (500..=599).contains(&status) =>
                {
                    if attempt > self.config.max_retries {
                        return Err(CoreError::ExhaustedRetries {
                            attempts: attempt,
                            last_status: status,
                            detail: truncate_body(&body),
                        });
                    }
                    self.clock.sleep_millis(self.backoff_delay(attempt));
                }
                Err(TransportError::Status { status, body }) => {
                    return Err(CoreError::Transport(format!(
                        "unexpected status {status}: {}",
                        truncate_body(&body)
                    )));
                }
                Err(TransportError::Network(message)) => {
                    return Err(CoreError::Transport(message));
                }
            }
        }
    }

    /// Complete many requests with a bounded worker pool. Results line up
    /// with the input order and each element fails independently. At most
    /// `max_in_flight` transport calls run concurrently (minimum 1).
    pub fn complete_batch(
        &self,
        requests: &[CompletionRequest],
        max_in_flight: usize,
    ) -> Vec<Result<CompletionResult>> {
        if requests.is_empty() {
            return Vec::new();
        }
        let workers = max_in_flight.max(1).min(requests.len());
        let cursor = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<CompletionResult>>>> =
            requests.iter().map(|_| Mutex::new(None)).collect();

        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = cursor.fetch_add(1, Ordering::SeqCst);
                    if i >= requests.len() {
                        break;
                    }
                    let result = self.complete(&requests[i]);
                    *slots[i].lock().unwrap() = Some(result);
                });
            }
        });

        slots
            .into_iter()
            .map(|slot| {
                slot.into_inner()
                    .unwrap()
                    .expect("every slot is filled before the scope ends")
            })
            .collect()
    }
}

fn truncate_body(body: &str) -> String {
    const LIMIT: usize = 200;
    if body.len() <= LIMIT {
        body.to_string()
    } else {
        let mut cut = LIMIT;
        while !body.is_char_boundary(cut) {
            cut -= 1;
        }
        format!("{}...", &body[..cut])
    }
}

/// What a [`MockTransport`] answers with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MockReply {
    Text(String),
    Status(u16, String),
    NetworkError(String),
}

type Responder = Box<dyn Fn(&CompletionRequest) -> MockReply + Send + Sync>;

/// Scriptable in-memory transport with call and concurrency counters.
/// Scripted replies are consumed first; afterwards the responder answers.
pub struct MockTransport {
    script: Mutex<VecDeque<MockReply>>,
    responder: Responder,
    delay: Duration,
    calls: AtomicU64,
    in_flight: AtomicU64,
    peak_in_flight: AtomicU64,
}

impl MockTransport {
    /// Always answers with the same text.
    pub fn fixed(text: impl Into<String>) -> MockTransport {
        let text = text.into();
        MockTransport::with_responder(move |_| MockReply::Text(text.clone()))
    }

    /// Computes each reply from the request.
    pub fn with_responder(
        responder: impl Fn(&CompletionRequest) -> MockReply + Send + Sync + 'static,
    ) -> MockTransport {
        MockTransport {
            script: Mutex::new(VecDeque::new()),
            responder: Box::new(responder),
            delay: Duration::ZERO,
            calls: AtomicU64::new(0),
            in_flight: AtomicU64::new(0),
            peak_in_flight: AtomicU64::new(0),
        }
    }

    /// Answers from `replies` in order, then falls back to `"ok"`.
    pub fn scripted(replies: Vec<MockReply>) -> MockTransport {
        let mock = MockTransport::fixed("ok");
        *mock.script.lock().unwrap() = replies.into();
        mock
    }

    /// Make every send take roughly `millis` of wall time (for observing
    /// concurrency).
    pub fn with_delay(mut self, millis: u64) -> MockTransport {
        self.delay = Duration::from_millis(millis);
        self
    }

    /// Total transport sends so far.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    /// Highest number of sends that were ever in flight at once.
    pub fn peak_in_flight(&self) -> u64 {
        self.peak_in_flight.load(Ordering::SeqCst)
    }

    fn word_count(text: &str) -> u64 {
        text.split_whitespace().count() as u64
    }
}

impl Transport for MockTransport {
    fn send(&self, request: &CompletionRequest) -> std::result::Result<TransportReply, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak_in_flight.fetch_max(now, Ordering::SeqCst);
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        let reply = self
            .script
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or_else(|| (self.responder)(request));
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        match reply {
            MockReply::Text(text) => {
                // Deterministic fake accounting: words in, words out.
                let prompt_tokens: u64 = request
                    .messages
                    .iter()
                    .map(|m| Self::word_count(&m.text) + 16 * m.images.len() as u64)
                    .sum();
                Ok(TransportReply {
                    usage: Usage {
                        prompt_tokens,
                        completion_tokens: Self::word_count(&text),
                    },
                    text,
                })
            }
            MockReply::Status(status, body) => Err(TransportError::Status { status, body }),
            MockReply::NetworkError(message) => Err(TransportError::Network(message)),
        }
    }
}

/// Real HTTP transport speaking the OpenAI-style chat-completions wire
/// format, with images inlined as base64 data URLs.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    url: String,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(url: impl Into<String>, api_key: Option<String>) -> Result<HttpTransport> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| CoreError::Transport(format!("failed to build HTTP client: {e}")))?;
        Ok(HttpTransport {
            client,
            url: url.into(),
            api_key,
        })
    }

    /// Build the JSON request body. Pure given the image bytes on disk.
    pub fn build_wire_body(request: &CompletionRequest) -> Result<serde_json::Value> {
        let mut messages = Vec::new();
        for msg in &request.messages {
            let content = if msg.images.is_empty() {
                serde_json::Value::String(msg.text.clone())
            } else {
                let mut parts = vec![serde_json::json!({"type": "text", "text": msg.text})];
                for image in &msg.images {
                    let bytes = fs::read(image)?;
                    let encoded = base64::engine::general_purpose::STANDARD.encode(&bytes);
                    parts.push(serde_json::json!({
                        "type": "image_url",
                        "image_url": {"url": format!("data:image/jpeg;base64,{encoded}")}
                    }));
                }
                serde_json::Value::Array(parts)
            };
            messages.push(serde_json::json!({"role": msg.role.as_str(), "content": content}));
        }
        Ok(serde_json::json!({
            "model": request.model,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "messages": messages,
        }))
    }

    /// Extract reply text and usage from a 2xx response body.
    pub fn parse_wire_response(body: &str) -> std::result::Result<TransportReply, TransportError> {
        let value: serde_json::Value = serde_json::from_str(body)
            .map_err(|e| TransportError::Network(format!("unparseable response body: {e}")))?;
        let text = value
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .ok_or_else(|| {
                TransportError::Network("response has no choices[0].message.content".to_string())
            })?
            .to_string();
        let usage = Usage {
            prompt_tokens: value
                .pointer("/usage/prompt_tokens")
                .and_then(|v| v.as_u64())
                .unwrap_or(0),
            completion_tokens: value
                .pointer("/usage/completion_tokens")
                .and_then(|v| v.as_u64())
                .unwrap_or(0),
        };
        Ok(TransportReply { text, usage })
    }
}

impl Transport for HttpTransport {
    fn send(&self, request: &CompletionRequest) -> std::result::Result<TransportReply, TransportError> {
        let body = Self::build_wire_body(request)
            .map_err(|e| TransportError::Network(format!("failed to build request: {e}")))?;
        let mut builder = self
            .client
            .post(&self.url)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            builder = builder.header("Authorization", format!("Bearer {key}"));
        }
        let response = builder
            .body(body.to_string())
            .send()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .text()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(TransportError::Status { status, body: text });
        }
        Self::parse_wire_response(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct ReplayEntry {
    request_key: String,
    text: String,
    prompt_tokens: u64,
    completion_tokens: u64,
}

/// Record/replay transport: in recording mode it forwards to an inner
/// transport and snapshots each reply under the request key; in replay
/// mode it answers purely from those snapshots and fails on anything
/// unrecorded.
pub struct ReplayTransport {
    dir: PathBuf,
    record_from: Option<Arc<dyn Transport>>,
}

impl ReplayTransport {
    pub fn replay(dir: impl Into<PathBuf>) -> ReplayTransport {
        ReplayTransport {
            dir: dir.into(),
            record_from: None,
        }
    }

    pub fn recording(dir: impl Into<PathBuf>, inner: Arc<dyn Transport>) -> ReplayTransport {
        ReplayTransport {
            dir: dir.into(),
            record_from: Some(inner),
        }
    }

    fn entry_path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }
}

impl Transport for ReplayTransport {
    fn send(&self, request: &CompletionRequest) -> std::result::Result<TransportReply, TransportError> {
        let path = self.entry_path(&request.request_key);
        if let Ok(text) = fs::read_to_string(&path) {
            let entry: ReplayEntry = serde_json::from_str(&text).map_err(|e| {
                TransportError::Network(format!("corrupt replay entry {}: {e}", path.display()))
            })?;
            return Ok(TransportReply {
                text: entry.text,
                usage: Usage {
                    prompt_tokens: entry.prompt_tokens,
                    completion_tokens: entry.completion_tokens,
                },
            });
        }
        let Some(inner) = &self.record_from else {
            return Err(TransportError::Network(format!(
                "no recorded reply for request {}",
                request.request_key
            )));
        };
        let reply = inner.send(request)?;
        let entry = ReplayEntry {
            request_key: request.request_key.clone(),
            text: reply.text.clone(),
            prompt_tokens: reply.usage.prompt_tokens,
            completion_tokens: reply.usage.completion_tokens,
        };
        let write = || -> Result<()> {
            fs::create_dir_all(&self.dir)?;
            fs::write(&path, serde_json::to_string_pretty(&entry)?)?;
            Ok(())
        };
        if let Err(e) = write() {
            log::warn!("failed to record reply {}: {e}", request.request_key);
        }
        Ok(reply)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(text: &str) -> CompletionRequest {
        CompletionRequest::new(
            "test-model",
            vec![ChatMessage::system("sys"), ChatMessage::user(text)],
            0.7,
            128,
        )
        .unwrap()
    }

    fn gateway(transport: Arc<dyn Transport>, config: GatewayConfig) -> (Gateway, Arc<MockClock>) {
        let clock = Arc::new(MockClock::new());
        (
            Gateway::with_clock(transport, config, clock.clone()),
            clock,
        )
    }

    #[test]
    fn request_key_depends_on_content_not_max_tokens() {
        let a = req("hello");
        let b = req("hello");
        assert_eq!(a.request_key, b.request_key);

        let different_text = req("other");
        assert_ne!(a.request_key, different_text.request_key);

        let different_temp = CompletionRequest::new(
            "test-model",
            vec![ChatMessage::system("sys"), ChatMessage::user("hello")],
            0.0,
            128,
        )
        .unwrap();
        assert_ne!(a.request_key, different_temp.request_key);

        let different_model = CompletionRequest::new(
            "other-model",
            vec![ChatMessage::system("sys"), ChatMessage::user("hello")],
            0.7,
            128,
        )
        .unwrap();
        assert_ne!(a.request_key, different_model.request_key);

        let different_max_tokens = CompletionRequest::new(
            "test-model",
            vec![ChatMessage::system("sys"), ChatMessage::user("hello")],
            0.7,
            999,
        )
        .unwrap();
        assert_eq!(a.request_key, different_max_tokens.request_key);
    }

    #[test]
    fn request_key_is_order_sensitive() {
        let ab = CompletionRequest::new(
            "m",
            vec![ChatMessage::user("alpha"), ChatMessage::user("beta")],
            0.0,
            16,
        )
        .unwrap();
        let ba = CompletionRequest::new(
            "m",
            vec![ChatMessage::user("beta"), ChatMessage::user("alpha")],
            0.0,
            16,
        )
        .unwrap();
        assert_ne!(ab.request_key, ba.request_key);
    }

    #[test]
    fn request_key_hashes_image_bytes_not_names() {
        let dir = tempfile::tempdir().unwrap();
        let img_a = dir.path().join("a.jpg");
        let img_b = dir.path().join("b.jpg");
        std::fs::write(&img_a, b"same-bytes").unwrap();
        std::fs::write(&img_b, b"same-bytes").unwrap();
        let with = |img: &std::path::Path| {
            CompletionRequest::new(
                "m",
                vec![ChatMessage::user_with_images("look", vec![img.to_path_buf()])],
                0.0,
                16,
            )
            .unwrap()
        };
        assert_eq!(with(&img_a).request_key, with(&img_b).request_key);
        std::fs::write(&img_b, b"different-bytes").unwrap();
        assert_ne!(with(&img_a).request_key, with(&img_b).request_key);
    }

    #[test]
    fn retry_on_429_then_success_counts_attempts() {
        let mock = Arc::new(MockTransport::scripted(vec![
            MockReply::Status(429, "slow down".into()),
            MockReply::Text("fine".into()),
        ]));
        let (gw, clock) = gateway(
            mock.clone(),
            GatewayConfig {
                max_retries: 3,
                backoff_initial_ms: 100,
                ..GatewayConfig::default()
            },
        );
        let result = gw.complete(&req("r")).unwrap();
        assert_eq!(result.text, "fine");
        assert_eq!(result.attempts, 2);
        assert!(!result.from_cache);
        assert_eq!(mock.calls(), 2);
        assert_eq!(clock.sleeps(), vec![100]);
    }

    #[test]
    fn backoff_doubles_until_retries_are_exhausted() {
        let mock = Arc::new(MockTransport::scripted(vec![
            MockReply::Status(500, "a".into()),
            MockReply::Status(503, "b".into()),
            MockReply::Status(429, "c".into()),
        ]));
        let (gw, clock) = gateway(
            mock.clone(),
            GatewayConfig {
                max_retries: 2,
                backoff_initial_ms: 100,
                ..GatewayConfig::default()
            },
        );
        let err = gw.complete(&req("r")).unwrap_err();
        match err {
            CoreError::ExhaustedRetries {
                attempts,
                last_status,
                ..
            } => {
                assert_eq!(attempts, 3);
                assert_eq!(last_status, 429);
            }
            other => panic!("expected ExhaustedRetries, got {other:?}"),
        }
        assert_eq!(mock.calls(), 3);
        assert_eq!(clock.sleeps(), vec![100, 200]);
    }

    #[test]
    fn auth_failures_do_not_retry() {
        for status in [401u16, 403] {
            let mock = Arc::new(MockTransport::scripted(vec![MockReply::Status(
                status,
                "denied".into(),
            )]));
            let (gw, _) = gateway(mock.clone(), GatewayConfig::default());
            let err = gw.complete(&req("r")).unwrap_err();
            assert_eq!(err.code(), "AUTH_FAILED");
            assert_eq!(mock.calls(), 1);
        }
    }

    #[test]
    fn other_statuses_and_network_errors_fail_fast() {
        let mock = Arc::new(MockTransport::scripted(vec![MockReply::Status(
            404,
            "nope".into(),
        )]));
        let (gw, _) = gateway(mock.clone(), GatewayConfig::default());
        assert_eq!(gw.complete(&req("r")).unwrap_err().code(), "TRANSPORT_ERROR");
        assert_eq!(mock.calls(), 1);

        let mock = Arc::new(MockTransport::scripted(vec![MockReply::NetworkError(
            "dns".into(),
        )]));
        let (gw, _) = gateway(mock.clone(), GatewayConfig::default());
        assert_eq!(gw.complete(&req("r")).unwrap_err().code(), "TRANSPORT_ERROR");
        assert_eq!(mock.calls(), 1);
    }

    #[test]
    fn cache_hit_skips_network_and_billing() {
        let dir = tempfile::tempdir().unwrap();
        let mock = Arc::new(MockTransport::scripted(vec![
            MockReply::Status(429, "later".into()),
            MockReply::Text("answer".into()),
        ]));
        let config = GatewayConfig {
            cache_dir: Some(dir.path().to_path_buf()),
            backoff_initial_ms: 1,
            ..GatewayConfig::default()
        };
        let (gw, _) = gateway(mock.clone(), config.clone());
        let first = gw.complete(&req("cached")).unwrap();
        assert_eq!(first.attempts, 2);
        assert!(!first.from_cache);
        assert_eq!(mock.calls(), 2);
        let billed = gw.tokens_used();
        assert!(billed > 0);

        // Same gateway, same request: served from disk, nothing re-billed.
        let second = gw.complete(&req("cached")).unwrap();
        assert!(second.from_cache);
        assert_eq!(second.text, "answer");
        assert_eq!(second.attempts, 2, "cached attempts are preserved");
        assert_eq!(mock.calls(), 2);
        assert_eq!(gw.tokens_used(), billed);

        // A fresh gateway over the same cache dir also hits the cache.
        let (gw2, _) = gateway(mock.clone(), config);
        let third = gw2.complete(&req("cached")).unwrap();
        assert!(third.from_cache);
        assert_eq!(mock.calls(), 2);
        assert_eq!(gw2.tokens_used(), 0);
    }

    #[test]
    fn corrupt_cache_entries_are_misses() {
        let dir = tempfile::tempdir().unwrap();
        let request = req("x");
        std::fs::write(
            dir.path().join(format!("{}.json", request.request_key)),
            "{broken",
        )
        .unwrap();
        let mock = Arc::new(MockTransport::fixed("fresh"));
        let (gw, _) = gateway(
            mock.clone(),
            GatewayConfig {
                cache_dir: Some(dir.path().to_path_buf()),
                ..GatewayConfig::default()
            },
        );
        let result = gw.complete(&request).unwrap();
        assert!(!result.from_cache);
        assert_eq!(result.text, "fresh");
        assert_eq!(mock.calls(), 1);
    }

    #[test]
    fn budget_blocks_dispatch_once_spent() {
        let mock = Arc::new(MockTransport::fixed("one two three four"));
        let (gw, _) = gateway(
            mock.clone(),
            GatewayConfig {
                max_total_tokens: Some(5),
                ..GatewayConfig::default()
            },
        );
        // First call passes the pre-dispatch check (0 < 5) and bills enough
        // to trip the cap for the next one.
        gw.complete(&req("a considerable amount of prompt text")).unwrap();
        assert!(gw.tokens_used() >= 5);
        let err = gw.complete(&req("second")).unwrap_err();
        assert_eq!(err.code(), "BUDGET_EXCEEDED");
        assert_eq!(mock.calls(), 1);
    }

    #[test]
    fn budget_does_not_block_cache_hits() {
        let dir = tempfile::tempdir().unwrap();
        let mock = Arc::new(MockTransport::fixed("words words words words words words"));
        let config = GatewayConfig {
            cache_dir: Some(dir.path().to_path_buf()),
            max_total_tokens: Some(4),
            ..GatewayConfig::default()
        };
        let (gw, _) = gateway(mock.clone(), config);
        gw.complete(&req("fill the budget")).unwrap();
        // Budget is now exhausted, but the cached reply is still served.
        let hit = gw.complete(&req("fill the budget")).unwrap();
        assert!(hit.from_cache);
        assert_eq!(mock.calls(), 1);
        assert_eq!(gw.complete(&req("new")).unwrap_err().code(), "BUDGET_EXCEEDED");
    }

    #[test]
    fn rate_limiter_keeps_every_one_second_window_under_the_cap() {
        let mock = Arc::new(MockTransport::fixed("ok"));
        let (gw, clock) = gateway(
            mock,
            GatewayConfig {
                rate_limit_per_sec: Some(2),
                ..GatewayConfig::default()
            },
        );
        // Five distinct requests, sequential: dispatch times must be
        // 0, 0, 1000, 1000, 2000 on the mock clock.
        for i in 0..5 {
            gw.complete(&req(&format!("r{i}"))).unwrap();
        }
        assert_eq!(clock.sleeps(), vec![1000, 1000]);
        assert_eq!(clock.now_millis(), 2000);
    }

    #[test]
    fn batch_preserves_order_and_bounds_concurrency() {
        let mock = Arc::new(
            MockTransport::with_responder(|request| {
                MockReply::Text(format!("echo:{}", request.messages[1].text))
            })
            .with_delay(25),
        );
        let gw = Gateway::new(mock.clone(), GatewayConfig::default());
        let requests: Vec<CompletionRequest> = (0..8).map(|i| req(&format!("q{i}"))).collect();
        let results = gw.complete_batch(&requests, 3);
        assert_eq!(results.len(), 8);
        for (i, result) in results.iter().enumerate() {
            assert_eq!(result.as_ref().unwrap().text, format!("echo:q{i}"));
        }
        assert_eq!(mock.calls(), 8);
        assert!(
            mock.peak_in_flight() <= 3,
            "peak in flight was {}",
            mock.peak_in_flight()
        );
    }

    #[test]
    fn batch_elements_fail_independently() {
        let mock = Arc::new(MockTransport::scripted(vec![
            MockReply::Text("first".into()),
            MockReply::Status(404, "gone".into()),
            MockReply::Text("third".into()),
        ]));
        let gw = Gateway::new(mock, GatewayConfig::default());
        let requests = vec![req("a"), req("b"), req("c")];
        // Single worker so the script lines up with request order.
        let results = gw.complete_batch(&requests, 1);
        assert_eq!(results[0].as_ref().unwrap().text, "first");
        assert_eq!(results[1].as_ref().unwrap_err().code(), "TRANSPORT_ERROR");
        assert_eq!(results[2].as_ref().unwrap().text, "third");
    }

    #[test]
    fn empty_batch_returns_empty() {
        let gw = Gateway::new(
            Arc::new(MockTransport::fixed("unused")),
            GatewayConfig::default(),
        );
        assert!(gw.complete_batch(&[], 4).is_empty());
    }

    #[test]
    fn identical_concurrent_requests_coalesce_to_one_send() {
        let dir = tempfile::tempdir().unwrap();
        let mock = Arc::new(MockTransport::fixed("shared").with_delay(20));
        let gw = Gateway::new(
            mock.clone(),
            GatewayConfig {
                cache_dir: Some(dir.path().to_path_buf()),
                ..GatewayConfig::default()
            },
        );
        let requests: Vec<CompletionRequest> = (0..4).map(|_| req("same")).collect();
        let results = gw.complete_batch(&requests, 4);
        assert!(results.iter().all(|r| r.is_ok()));
        assert_eq!(mock.calls(), 1, "duplicates must not hit the network");
        assert_eq!(
            results.iter().filter(|r| r.as_ref().unwrap().from_cache).count(),
            3
        );
    }

    #[test]
    fn wire_body_shapes_text_and_image_messages() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("view.jpg");
        std::fs::write(&img, b"jpegbytes").unwrap();
        let request = CompletionRequest::new(
            "vision-model",
            vec![
                ChatMessage::system("be helpful"),
                ChatMessage::user_with_images("what do you see", vec![img]),
            ],
            0.3,
            256,
        )
        .unwrap();
        let body = HttpTransport::build_wire_body(&request).unwrap();
        assert_eq!(body["model"], "vision-model");
        assert_eq!(body["temperature"], 0.3);
        assert_eq!(body["max_tokens"], 256);
        assert_eq!(body["messages"][0]["content"], "be helpful");
        let parts = body["messages"][1]["content"].as_array().unwrap();
        assert_eq!(parts[0]["type"], "text");
        assert_eq!(parts[1]["type"], "image_url");
        let url = parts[1]["image_url"]["url"].as_str().unwrap();
        assert!(url.starts_with("data:image/jpeg;base64,"));
        // "jpegbytes" in standard base64.
        assert!(url.ends_with("anBlZ2J5dGVz"));
    }

    #[test]
    fn wire_response_parses_text_and_usage() {
        let body = r#"{
            "choices": [{"message": {"role": "assistant", "content": "hello"}}],
            "usage": {"prompt_tokens": 12, "completion_tokens": 3}
        }"#;
        let reply = HttpTransport::parse_wire_response(body).unwrap();
        assert_eq!(reply.text, "hello");
        assert_eq!(reply.usage.prompt_tokens, 12);
        assert_eq!(reply.usage.completion_tokens, 3);

        let missing = HttpTransport::parse_wire_response(r#"{"choices": []}"#);
        assert!(matches!(missing, Err(TransportError::Network(_))));
        let no_usage = HttpTransport::parse_wire_response(
            r#"{"choices": [{"message": {"content": "x"}}]}"#,
        )
        .unwrap();
        assert_eq!(no_usage.usage.total(), 0);
    }

    #[test]
    fn replay_transport_records_then_replays() {
        let dir = tempfile::tempdir().unwrap();
        let request = req("record me");
        let inner = Arc::new(MockTransport::fixed("recorded reply"));
        let recorder = ReplayTransport::recording(dir.path(), inner.clone());
        let first = recorder.send(&request).unwrap();
        assert_eq!(first.text, "recorded reply");
        assert_eq!(inner.calls(), 1);

        // Replay without any inner transport.
        let replayer = ReplayTransport::replay(dir.path());
        let second = replayer.send(&request).unwrap();
        assert_eq!(second.text, "recorded reply");
        assert_eq!(second.usage, first.usage);

        let unknown = replayer.send(&req("never recorded"));
        assert!(matches!(unknown, Err(TransportError::Network(_))));
    }

    #[test]
    fn truncate_body_respects_char_boundaries() {
        let long = "é".repeat(300);
        let cut = truncate_body(&long);
        assert!(cut.ends_with("..."));
        assert!(cut.len() <= 203);
        assert_eq!(truncate_body("short"), "short");
    }
}
