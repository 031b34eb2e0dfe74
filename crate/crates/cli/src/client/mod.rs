//! Completion client: one backend, a persistent cache in front of it.

mod cache;
mod remote;

pub use cache::{CacheEntry, CacheError, CacheKey, ResponseCache, CACHE_MAGIC};
pub use remote::{RemoteEndpoint, RetryPolicy, API_KEY_VAR};

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use llmreward_core::judge::{Completer, CompletionError, MockOracle, MockScript};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("transport failed after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    Endpoint { status: u16, body: String },
    #[error("endpoint protocol: {0}")]
    Protocol(String),
    #[error("backend: {0}")]
    Backend(String),
    #[error("not in cache and the backend is offline")]
    NotCached,
    #[error("invalid request: {0}")]
    Request(String),
    #[error(transparent)]
    Cache(#[from] CacheError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub stop: Vec<String>,
}

impl CompletionRequest {
    pub fn new(model: impl Into<String>, prompt: impl Into<String>, max_tokens: u32) -> Self {
        Self { model: model.into(), prompt: prompt.into(), temperature: 0.0, max_tokens, stop: Vec::new() }
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(ClientError::Request(format!("temperature {} must be finite and >= 0", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(ClientError::Request("max_tokens must be at least 1".into()));
        }
        Ok(())
    }

    /// SHA-256 over the length-prefixed model, prompt, temperature,
    /// max_tokens and stop sequences.
    pub fn cache_key(&self) -> CacheKey {
        let mut h = Sha256::new();
        let mut field = |b: &[u8]| {
            h.update((b.len() as u64).to_le_bytes());
            h.update(b);
        };
        field(self.model.as_bytes());
        field(self.prompt.as_bytes());
        field(&self.temperature.to_bits().to_le_bytes());
        field(&self.max_tokens.to_le_bytes());
        field(&(self.stop.len() as u64).to_le_bytes());
        for s in &self.stop {
            field(s.as_bytes());
        }
        h.finalize().into()
    }

    /// Requests that can share one backend call.
    fn group(&self) -> (String, u64, u32, Vec<String>) {
        (self.model.clone(), self.temperature.to_bits(), self.max_tokens, self.stop.clone())
    }
}

#[derive(Debug)]
pub enum Backend {
    Remote(RemoteEndpoint),
    MockOracle(MockOracle),
    MockScript(MockScript),
}

impl Backend {
    pub fn name(&self) -> &'static str {
        match self {
            Backend::Remote(_) => "remote",
            Backend::MockOracle(_) => "mock-oracle",
            Backend::MockScript(_) => "mock-script",
        }
    }

    /// One backend call answering every prompt. Mocks fail per prompt;
    /// a failed HTTP request fails all of its prompts.
    fn call(&self, model: &str, prompts: &[&str], temperature: f64, max_tokens: u32, stop: &[String]) -> Vec<Result<String, ClientError>> {
        let mock = |c: &dyn Completer| {
            prompts.iter().map(|p| c.complete(p).map_err(|e: CompletionError| ClientError::Backend(e.message))).collect()
        };
        match self {
            Backend::Remote(r) => match r.complete_batch(model, prompts, temperature, max_tokens, stop) {
                Ok(texts) => texts.into_iter().map(Ok).collect(),
                Err(e) => {
                    let msg = e.to_string();
                    let mut out = vec![Err(e)];
                    out.extend((1..prompts.len()).map(|_| Err(ClientError::Backend(msg.clone()))));
                    out
                }
            },
            Backend::MockOracle(m) => mock(m),
            Backend::MockScript(m) => mock(m),
        }
    }
}

/// Settings applied to prompts sent through the [`Completer`] interface.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestDefaults {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub stop: Vec<String>,
    /// Largest number of prompts sent in one backend call.
    pub batch_size: usize,
}

impl Default for RequestDefaults {
    fn default() -> Self {
        Self { model: "text-davinci-002".into(), temperature: 0.0, max_tokens: 256, stop: Vec::new(), batch_size: 50 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClientStats {
    /// Calls made to the backend (a batch counts once).
    pub backend_calls: u64,
    /// Prompts answered by the backend.
    pub backend_prompts: u64,
    pub cache_hits: u64,
}

/// Per-element outcome of [`LlmClient::batch_complete`], in request order.
#[derive(Debug)]
pub struct BatchReport {
    pub results: Vec<Result<String, ClientError>>,
}

impl BatchReport {
    pub fn succeeded(&self) -> usize {
        self.results.iter().filter(|r| r.is_ok()).count()
    }

    pub fn errors(&self) -> impl Iterator<Item = (usize, &ClientError)> {
        self.results.iter().enumerate().filter_map(|(i, r)| r.as_ref().err().map(|e| (i, e)))
    }
}

/// Shareable across threads; cache writes are serialized internally.
#[derive(Debug)]
pub struct LlmClient {
    backend: Backend,
    cache: ResponseCache,
    defaults: RequestDefaults,
    offline: bool,
    backend_calls: AtomicU64,
    backend_prompts: AtomicU64,
    cache_hits: AtomicU64,
    touched: Mutex<BTreeSet<CacheKey>>,
}

impl LlmClient {
    pub fn new(backend: Backend, cache: ResponseCache, defaults: RequestDefaults) -> Self {
        Self {
            backend,
            cache,
            defaults,
            offline: false,
            backend_calls: AtomicU64::new(0),
            backend_prompts: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
            touched: Mutex::new(BTreeSet::new()),
        }
    }

    /// Serve from the cache only; misses fail with [`ClientError::NotCached`].
    pub fn offline(mut self, offline: bool) -> Self {
        self.offline = offline;
        self
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    pub fn defaults(&self) -> &RequestDefaults {
        &self.defaults
    }

    pub fn stats(&self) -> ClientStats {
        ClientStats {
            backend_calls: self.backend_calls.load(Ordering::Relaxed),
            backend_prompts: self.backend_prompts.load(Ordering::Relaxed),
            cache_hits: self.cache_hits.load(Ordering::Relaxed),
        }
    }

    /// Cache keys of every request this client has served, sorted.
    pub fn touched_keys(&self) -> Vec<CacheKey> {
        self.touched.lock().expect("touched set poisoned").iter().copied().collect()
    }

    pub fn request(&self, prompt: &str) -> CompletionRequest {
        CompletionRequest {
            model: self.defaults.model.clone(),
            prompt: prompt.to_string(),
            temperature: self.defaults.temperature,
            max_tokens: self.defaults.max_tokens,
            stop: self.defaults.stop.clone(),
        }
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<String, ClientError> {
        self.batch_complete(std::slice::from_ref(request))?.results.pop().expect("one result")
    }

    /// Completes every request, answering from the cache where possible and
    /// sending the misses in batches of at most `batch_size`. New responses
    /// are persisted before this returns.
    pub fn batch_complete(&self, requests: &[CompletionRequest]) -> Result<BatchReport, ClientError> {
        if requests.is_empty() {
            return Err(ClientError::Request("empty batch".into()));
        }
        let mut results: Vec<Option<Result<String, ClientError>>> = Vec::with_capacity(requests.len());
        let keys: Vec<CacheKey> = requests.iter().map(CompletionRequest::cache_key).collect();
        // Distinct misses by key, grouped by shared request settings.
        let mut misses: BTreeMap<(String, u64, u32, Vec<String>), Vec<usize>> = BTreeMap::new();
        let mut first_of: BTreeMap<CacheKey, usize> = BTreeMap::new();
        for (i, (r, key)) in requests.iter().zip(&keys).enumerate() {
            if let Err(e) = r.validate() {
                results.push(Some(Err(e)));
                continue;
            }
            self.touched.lock().expect("touched set poisoned").insert(*key);
            if let Some(text) = self.cache.get(key) {
                self.cache_hits.fetch_add(1, Ordering::Relaxed);
                results.push(Some(Ok(text.to_string())));
            } else if self.offline {
                results.push(Some(Err(ClientError::NotCached)));
            } else {
                results.push(None);
                if let std::collections::btree_map::Entry::Vacant(v) = first_of.entry(*key) {
                    v.insert(i);
                    misses.entry(r.group()).or_default().push(i);
                }
            }
        }
        for ((model, temp_bits, max_tokens, stop), idx) in misses {
            for chunk in idx.chunks(self.defaults.batch_size.max(1)) {
                let prompts: Vec<&str> = chunk.iter().map(|&i| requests[i].prompt.as_str()).collect();
                self.backend_calls.fetch_add(1, Ordering::Relaxed);
                let answers = self.backend.call(&model, &prompts, f64::from_bits(temp_bits), max_tokens, &stop);
                let fresh: Vec<(CacheKey, &str)> = chunk
                    .iter()
                    .zip(&answers)
                    .filter_map(|(&i, a)| a.as_ref().ok().map(|t| (keys[i], t.as_str())))
                    .collect();
                self.backend_prompts.fetch_add(fresh.len() as u64, Ordering::Relaxed);
                self.cache.insert_many(&fresh)?;
                for (&i, a) in chunk.iter().zip(answers) {
                    // Another thread may have raced us; the cache keeps its first answer.
                    results[i] = Some(a.map(|t| self.cache.get(&keys[i]).map_or(t, |c| c.to_string())));
                }
            }
        }
        // Duplicates of a miss share its outcome.
        let shared: Vec<Option<Result<String, ClientError>>> = (0..requests.len())
            .map(|i| {
                results[i].is_none().then(|| match results[first_of[&keys[i]]].as_ref().expect("source answered") {
                    Ok(t) => Ok(t.clone()),
                    Err(e) => Err(ClientError::Backend(e.to_string())),
                })
            })
            .collect();
        let results = results.into_iter().zip(shared).map(|(r, s)| r.or(s).expect("every slot filled")).collect();
        Ok(BatchReport { results })
    }

    /// Completes prompts with the default settings.
    pub fn complete_prompts(&self, prompts: &[String]) -> Result<BatchReport, ClientError> {
        let requests: Vec<_> = prompts.iter().map(|p| self.request(p)).collect();
        self.batch_complete(&requests)
    }
}

impl Completer for LlmClient {
    fn complete(&self, prompt: &str) -> Result<String, CompletionError> {
        LlmClient::complete(self, &self.request(prompt)).map_err(|e| CompletionError::new(e.to_string()))
    }
}
