//! Chat-completion access with caching, single-flight deduplication and
//! bounded concurrency over pluggable backends.

mod cache;
mod http;
mod mock;

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Instant;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Direction;
use crate::rulecraft::{CodeRule, CodeStyle, InducedRule};
use crate::text;
use crate::translator::CombineStrategy;

pub use cache::ResponseCache;
pub use http::HttpBackend;
pub use mock::{ClassifierProfile, MockBackend, MockProfile, Override, TranslatorProfile};

pub const DEFAULT_MAX_TOKENS: u32 = 1024;
pub const CLASSIFY_MAX_TOKENS: u32 = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LlmError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("cache miss for request {0}")]
    CacheMiss(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("prompt needs about {estimated} tokens, over the context budget of {budget}")]
    ContextOverflow { estimated: usize, budget: usize },
    #[error("mock profile error: {0}")]
    Profile(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl LlmError {
    /// Errors that abort a run instead of becoming a failed record: an
    /// oversized prompt, or a strict replay that cannot reproduce the run.
    pub fn is_fatal(&self) -> bool {
        matches!(self, LlmError::ContextOverflow { .. } | LlmError::CacheMiss(_))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message { role: "system".into(), content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message { role: "user".into(), content: content.into() }
    }
}

/// What a request asks for, in structured form.
///
/// Tags never reach the wire or the cache key; the oracle mock answers from
/// them instead of parsing prompt text.
#[derive(Clone, Debug, PartialEq)]
pub enum RequestTag {
    Classify { instance_id: String, rule_id: String },
    FullBook { instance_id: String },
    Translate {
        instance_id: String,
        direction: Direction,
        /// Book rules shown in the prompt, in prompt order.
        rule_ids: Vec<String>,
        induced: Vec<InducedRule>,
        want_igt: bool,
        use_lexicon: bool,
    },
    ConvertRule { rule_id: String, style: CodeStyle },
    GenerateIgt { tokens: Vec<String>, lexicon: IndexMap<String, String>, memory: IndexMap<String, String> },
    Induce { example_ids: Vec<String> },
    Combine { strategy: CombineStrategy, first: CodeRule, second: CodeRule },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model_id: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<Vec<String>>,
    #[serde(skip)]
    pub tag: Option<RequestTag>,
}

impl CompletionRequest {
    pub fn new(model_id: impl Into<String>, messages: Vec<Message>, max_tokens: u32) -> Self {
        CompletionRequest { model_id: model_id.into(), messages, temperature: 0.0, max_tokens, stop: None, tag: None }
    }

    pub fn with_tag(mut self, tag: RequestTag) -> Self {
        self.tag = Some(tag);
        self
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.messages.is_empty() {
            return Err(LlmError::InvalidRequest("no messages".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(LlmError::InvalidRequest("temperature must be non-negative".into()));
        }
        Ok(())
    }

    /// All message contents joined, for budget estimation.
    pub fn prompt_text(&self) -> String {
        self.messages.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n")
    }

    pub fn estimated_tokens(&self) -> usize {
        self.messages.iter().map(|m| text::estimate_tokens(&m.content)).sum()
    }

    pub fn key(&self) -> CacheKey {
        CacheKey::of(self)
    }
}

#[derive(Serialize)]
struct Canonical<'a> {
    model_id: &'a str,
    temperature: f64,
    messages: &'a [Message],
    max_tokens: u32,
    stop: &'a Option<Vec<String>>,
}

/// SHA-256 over the canonical request JSON (fixed key order).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CacheKey(pub String);

impl CacheKey {
    pub fn of(req: &CompletionRequest) -> Self {
        CacheKey(hex::encode(Sha256::digest(canonical_json(req))))
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub(crate) fn canonical_json(req: &CompletionRequest) -> Vec<u8> {
    serde_json::to_vec(&Canonical {
        model_id: &req.model_id,
        temperature: req.temperature,
        messages: &req.messages,
        max_tokens: req.max_tokens,
        stop: &req.stop,
    })
    .expect("request serializes")
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub usage: Usage,
    pub latency_ms: u64,
    /// Served from the response cache.
    pub cached: bool,
    /// Lenient replay had no entry; `text` is empty.
    pub cache_miss: bool,
}

impl Completion {
    pub fn new(text: impl Into<String>, usage: Usage) -> Self {
        Completion { text: text.into(), usage, latency_ms: 0, cached: false, cache_miss: false }
    }
}

pub trait ChatBackend: Send + Sync {
    fn call(&self, req: &CompletionRequest) -> Result<Completion, LlmError>;

    /// Short description recorded in run manifests.
    fn describe(&self) -> String;
}

/// Cache-only backend: every call is a miss by construction, since the client
/// consults the cache first.
pub struct ReplayBackend {
    pub strict: bool,
}

impl ChatBackend for ReplayBackend {
    fn call(&self, req: &CompletionRequest) -> Result<Completion, LlmError> {
        if self.strict {
            Err(LlmError::CacheMiss(req.key().0))
        } else {
            log::warn!("replay cache miss for {}", req.key());
            Ok(Completion { cache_miss: true, ..Completion::new("", Usage::default()) })
        }
    }

    fn describe(&self) -> String {
        if self.strict { "replay(strict)" } else { "replay(lenient)" }.into()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClientConfig {
    pub model_id: String,
    pub endpoint_url: String,
    pub api_key_env: String,
    pub concurrency: usize,
    pub retry_max: u32,
    pub timeout_s: u64,
    pub backoff_ms: u64,
    pub context_budget: usize,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            model_id: "mock".into(),
            endpoint_url: "http://localhost:8000/v1".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            concurrency: 8,
            retry_max: 3,
            timeout_s: 120,
            backoff_ms: 500,
            context_budget: 8192,
        }
    }
}

struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore { permits: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut p = self.permits.lock().unwrap();
        while *p == 0 {
            p = self.cv.wait(p).unwrap();
        }
        *p -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

type Outcome = Result<Completion, LlmError>;

#[derive(Default)]
struct Slot {
    result: Mutex<Option<Outcome>>,
    cv: Condvar,
}

/// Thread-safe client: context budget check, cache lookup, single-flight
/// deduplication of identical requests (successful replies are memoized for
/// the client's lifetime), and a bound on concurrent backend calls.
pub struct LlmClient {
    backend: Arc<dyn ChatBackend>,
    cache: Option<Arc<ResponseCache>>,
    config: ClientConfig,
    inflight: Mutex<HashMap<CacheKey, Arc<Slot>>>,
    permits: Semaphore,
    backend_calls: AtomicUsize,
}

impl LlmClient {
    pub fn new(backend: Arc<dyn ChatBackend>, cache: Option<Arc<ResponseCache>>, config: ClientConfig) -> Self {
        LlmClient {
            permits: Semaphore::new(config.concurrency),
            backend,
            cache,
            config,
            inflight: Mutex::new(HashMap::new()),
            backend_calls: AtomicUsize::new(0),
        }
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    pub fn model_id(&self) -> &str {
        &self.config.model_id
    }

    pub fn describe(&self) -> String {
        self.backend.describe()
    }

    /// Number of requests that reached the backend.
    pub fn backend_calls(&self) -> usize {
        self.backend_calls.load(Ordering::SeqCst)
    }

    /// Greedy request for this client's model.
    pub fn request(&self, messages: Vec<Message>, max_tokens: u32, tag: RequestTag) -> CompletionRequest {
        CompletionRequest::new(self.config.model_id.clone(), messages, max_tokens).with_tag(tag)
    }

    /// Refuses prompts over the configured context budget.
    pub fn check_budget(&self, req: &CompletionRequest) -> Result<(), LlmError> {
        let estimated = req.estimated_tokens();
        if estimated > self.config.context_budget {
            return Err(LlmError::ContextOverflow { estimated, budget: self.config.context_budget });
        }
        Ok(())
    }

    pub fn complete(&self, req: &CompletionRequest) -> Outcome {
        req.validate()?;
        self.check_budget(req)?;
        let key = req.key();
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            return Ok(hit);
        }

        let (slot, leader) = {
            let mut map = self.inflight.lock().unwrap();
            match map.get(&key) {
                Some(s) => (s.clone(), false),
                None => {
                    let s = Arc::new(Slot::default());
                    map.insert(key.clone(), s.clone());
                    (s, true)
                }
            }
        };
        if !leader {
            let mut r = slot.result.lock().unwrap();
            while r.is_none() {
                r = slot.cv.wait(r).unwrap();
            }
            return r.clone().expect("result set");
        }

        let outcome = self.call_backend(req, &key);
        *slot.result.lock().unwrap() = Some(outcome.clone());
        slot.cv.notify_all();
        // Successful slots stay as an in-process memo so late duplicates
        // never reach the backend; failures are dropped to allow retries.
        if outcome.is_err() {
            self.inflight.lock().unwrap().remove(&key);
        }
        outcome
    }

    fn call_backend(&self, req: &CompletionRequest, key: &CacheKey) -> Outcome {
        // A concurrent leader may have finished between our lookup and now.
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(key)) {
            return Ok(hit);
        }
        let _permit = self.permits.acquire();
        self.backend_calls.fetch_add(1, Ordering::SeqCst);
        let start = Instant::now();
        let mut c = self.backend.call(req)?;
        c.latency_ms = start.elapsed().as_millis() as u64;
        if !c.cache_miss {
            if let Some(cache) = &self.cache {
                if let Err(e) = cache.put(req, key, &c) {
                    log::warn!("could not write cache entry {key}: {e}");
                }
            }
        }
        Ok(c)
    }

    /// Completes all requests with bounded concurrency; results keep input order.
    pub fn complete_many(&self, reqs: &[CompletionRequest]) -> Vec<Outcome> {
        let workers = self.config.concurrency.max(1).min(reqs.len());
        if workers <= 1 {
            return reqs.iter().map(|r| self.complete(r)).collect();
        }
        let next = AtomicUsize::new(0);
        let results: Vec<Mutex<Option<Outcome>>> = reqs.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= reqs.len() {
                        break;
                    }
                    *results[i].lock().unwrap() = Some(self.complete(&reqs[i]));
                });
            }
        });
        results.into_iter().map(|m| m.into_inner().unwrap().expect("every request completed")).collect()
    }
}
