//! Uniform sampling interface over the three teacher backends.
//!
//! A harvester asks for `n` completions of a prompt and does not care where
//! they come from: a live chat-completion endpoint, a content-addressed
//! replay cache, or the deterministic simulator. Every completion an
//! expensive backend produces is recorded in the cache keyed by its request
//! digest, so any run can later be replayed byte-for-byte — the cache record
//! keeps the original backend tag and timestamp, and replayed samples
//! reproduce both rather than stamping their own.
//!
//! The live path is the only one that spends money, so it is also the only
//! one with operational guards: a sliding-window rate limiter, bounded
//! retries with exponential backoff, a parallelism bound, and a cache-first
//! lookup that makes interrupted harvests cheap to restart.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use selfdistill_core::digest::request_hash;
use selfdistill_core::prompt::EvalSubject;
use selfdistill_core::sim::{simulate_cot, simulate_self_eval, SimError, SimulatedTeacherConfig};
use selfdistill_core::types::SIM_TIMESTAMP;
use selfdistill_core::{TaskInstance, TeacherBackendKind, TeacherProvenance};
use serde::{Deserialize, Serialize};

use crate::clock::{rfc3339_utc, Clock, SystemClock};
use crate::corpus::{read_or_empty, CorpusIoError, CorpusRecord};

/// How one batch of completions is requested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub n_samples: u32,
    pub max_tokens: u32,
    pub model_id: String,
}

impl Default for SamplingParams {
    fn default() -> Self {
        // Multi-sample harvesting wants diversity, hence a warm temperature.
        SamplingParams {
            temperature: 0.7,
            n_samples: 1,
            max_tokens: 512,
            model_id: "sim-teacher".to_string(),
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.n_samples < 1 {
            return Err(GatewayError::InvalidParams("n_samples must be at least 1"));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidParams("temperature must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Context the simulator needs beyond the prompt text. The live and replay
/// backends ignore it; the simulated backend requires it.
#[derive(Debug, Clone, Copy)]
pub enum SimRequest<'a> {
    Cot { instance: &'a TaskInstance },
    SelfEval { subject: &'a EvalSubject, truth_is_correct: bool },
}

/// One completion plus where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampled {
    pub text: String,
    pub provenance: TeacherProvenance,
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("invalid sampling params: {0}")]
    InvalidParams(&'static str),
    #[error("no API key: set TEACHER_API_KEY or provide api_key in config")]
    MissingApiKey,
    #[error("authentication rejected (HTTP {status})")]
    Auth { status: u16 },
    #[error("rate limit still exhausted after {attempts} attempts (last HTTP {last_status})")]
    RateLimitExhausted { attempts: u32, last_status: u16 },
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("malformed completion response: {0}")]
    BadResponse(String),
    #[error("replay cache has no record for digest {digest}")]
    CacheMiss { digest: String },
    #[error("simulated backend needs instance or subject context for this request")]
    SimulatorNeedsContext,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Cache(#[from] CorpusIoError),
}

/// One cached completion, keyed by the digest of
/// (prompt, model, temperature, max_tokens, sample_index). Sample-indexed
/// records mean a later harvest with a smaller n still hits, and a larger n
/// misses only on the new indices. The original backend tag and timestamp
/// ride along so replay reproduces provenance exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub request_hash: String,
    pub prompt: String,
    pub params: SamplingParams,
    pub sample_index: u32,
    pub completions: Vec<String>,
    pub backend: TeacherBackendKind,
    pub timestamp: String,
}

impl CorpusRecord for CacheRecord {
    const KIND: &'static str = "cache record";

    fn key(&self) -> String {
        self.request_hash.clone()
    }
}

/// In-memory index over a JSONL cache file, append-on-record.
struct CacheStore {
    path: PathBuf,
    map: BTreeMap<String, CacheRecord>,
}

impl CacheStore {
    fn open(path: &Path) -> Result<Self, CorpusIoError> {
        let records: Vec<CacheRecord> = read_or_empty(path)?;
        let map = records.into_iter().map(|r| (r.request_hash.clone(), r)).collect();
        Ok(CacheStore { path: path.to_path_buf(), map })
    }

    fn get(&self, digest: &str) -> Option<&CacheRecord> {
        self.map.get(digest)
    }

    /// Insert and append to disk; re-recording an existing digest is a no-op
    /// so repeated harvests never grow the file.
    fn record(&mut self, rec: CacheRecord) -> Result<bool, CorpusIoError> {
        if self.map.contains_key(&rec.request_hash) {
            return Ok(false);
        }
        let line = serde_json::to_string(&rec).expect("cache record serializes");
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| CorpusIoError::Io { path: self.path.clone(), source: e })?;
        file.write_all(line.as_bytes())
            .and_then(|_| file.write_all(b"\n"))
            .map_err(|e| CorpusIoError::Io { path: self.path.clone(), source: e })?;
        self.map.insert(rec.request_hash.clone(), rec);
        Ok(true)
    }
}

/// Sliding-window limiter: at most `rps` dispatches in any 1000 ms window.
pub struct RateLimiter {
    rps: u32,
    dispatches: Mutex<std::collections::VecDeque<u64>>,
}

impl RateLimiter {
    pub fn new(rps: u32) -> Self {
        RateLimiter { rps: rps.max(1), dispatches: Mutex::new(Default::default()) }
    }

    /// Block (via the clock) until a dispatch slot is free, then claim it.
    pub fn acquire(&self, clock: &dyn Clock) {
        loop {
            let wait = {
                let mut window = self.dispatches.lock().unwrap();
                let now = clock.now_millis();
                while window.front().is_some_and(|&t| t + 1000 <= now) {
                    window.pop_front();
                }
                if (window.len() as u32) < self.rps {
                    window.push_back(now);
                    return;
                }
                window.front().copied().unwrap() + 1000 - now
            };
            clock.sleep_millis(wait.max(1));
        }
    }
}

/// Exponential backoff schedule for transient live failures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 4, base_delay_ms: 250, max_delay_ms: 4000 }
    }
}

impl RetryPolicy {
    /// Delay before retrying after failed attempt number `attempt` (0-based).
    pub fn delay_ms(&self, attempt: u32) -> u64 {
        self.base_delay_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.max_delay_ms)
    }
}

/// Counting semaphore bounding concurrent live requests.
struct Semaphore {
    permits: Mutex<usize>,
    freed: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Semaphore { permits: Mutex::new(permits.max(1)), freed: Condvar::new() }
    }

    fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.freed.wait(permits).unwrap();
        }
        *permits -= 1;
        drop(permits);
        let out = f();
        *self.permits.lock().unwrap() += 1;
        self.freed.notify_one();
        out
    }
}

/// Live endpoint configuration. `api_key: None` falls back to the
/// `TEACHER_API_KEY` environment variable at construction time.
#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub parallelism: usize,
    pub rate_limit_rps: Option<u32>,
    pub retry: RetryPolicy,
    pub timeout_ms: u64,
}

impl Default for LiveConfig {
    fn default() -> Self {
        LiveConfig {
            base_url: "https://api.openai.com/v1".to_string(),
            api_key: None,
            parallelism: 4,
            rate_limit_rps: Some(4),
            retry: RetryPolicy::default(),
            timeout_ms: 120_000,
        }
    }
}

struct LiveBackend {
    base_url: String,
    api_key: String,
    client: reqwest::blocking::Client,
    limiter: Option<RateLimiter>,
    retry: RetryPolicy,
    semaphore: Semaphore,
}

enum Backend {
    Live(LiveBackend),
    Replay,
    Simulated(SimulatedTeacherConfig),
}

impl Backend {
    fn kind(&self) -> TeacherBackendKind {
        match self {
            Backend::Live(_) => TeacherBackendKind::Live,
            Backend::Replay => TeacherBackendKind::Replay,
            Backend::Simulated(_) => TeacherBackendKind::Simulated,
        }
    }
}

/// Cumulative per-backend activity, for tests and harvest reports.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct GatewayCounters {
    /// HTTP requests actually dispatched (retries included).
    pub live_requests: u64,
    /// Completions generated by the simulator.
    pub sim_draws: u64,
    /// Completions served from the cache (replay backend or live warm start).
    pub cache_hits: u64,
    /// New records appended to the cache file.
    pub cache_appends: u64,
}

#[derive(Default)]
struct CounterCells {
    live_requests: AtomicU64,
    sim_draws: AtomicU64,
    cache_hits: AtomicU64,
    cache_appends: AtomicU64,
}

pub struct TeacherGateway {
    backend: Backend,
    cache: Option<Mutex<CacheStore>>,
    clock: Arc<dyn Clock>,
    counters: CounterCells,
}

impl TeacherGateway {
    pub fn live(config: LiveConfig, cache_path: Option<&Path>) -> Result<Self, GatewayError> {
        let api_key = match config.api_key {
            Some(key) => key,
            None => std::env::var("TEACHER_API_KEY").map_err(|_| GatewayError::MissingApiKey)?,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| GatewayError::Transport { attempts: 0, message: e.to_string() })?;
        let backend = Backend::Live(LiveBackend {
            base_url: config.base_url.trim_end_matches('/').to_string(),
            api_key,
            client,
            limiter: config.rate_limit_rps.map(RateLimiter::new),
            retry: config.retry,
            semaphore: Semaphore::new(config.parallelism),
        });
        Self::with_backend(backend, cache_path)
    }

    pub fn replay(cache_path: &Path) -> Result<Self, GatewayError> {
        Self::with_backend(Backend::Replay, Some(cache_path))
    }

    pub fn simulated(
        config: SimulatedTeacherConfig,
        cache_path: Option<&Path>,
    ) -> Result<Self, GatewayError> {
        config.validate()?;
        Self::with_backend(Backend::Simulated(config), cache_path)
    }

    fn with_backend(backend: Backend, cache_path: Option<&Path>) -> Result<Self, GatewayError> {
        let cache = match cache_path {
            Some(path) => Some(Mutex::new(CacheStore::open(path)?)),
            None => None,
        };
        Ok(TeacherGateway {
            backend,
            cache,
            clock: Arc::new(SystemClock),
            counters: CounterCells::default(),
        })
    }

    /// Swap the clock (tests drive retry/backoff through a fake one).
    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn backend_kind(&self) -> TeacherBackendKind {
        self.backend.kind()
    }

    pub fn counters(&self) -> GatewayCounters {
        GatewayCounters {
            live_requests: self.counters.live_requests.load(Ordering::Relaxed),
            sim_draws: self.counters.sim_draws.load(Ordering::Relaxed),
            cache_hits: self.counters.cache_hits.load(Ordering::Relaxed),
            cache_appends: self.counters.cache_appends.load(Ordering::Relaxed),
        }
    }

    /// Fetch exactly `params.n_samples` completions for the prompt.
    pub fn sample(
        &self,
        prompt: &str,
        params: &SamplingParams,
        sim: Option<SimRequest<'_>>,
    ) -> Result<Vec<Sampled>, GatewayError> {
        params.validate()?;
        let digests: Vec<String> = (0..params.n_samples)
            .map(|i| request_hash(prompt, &params.model_id, params.temperature, params.max_tokens, i))
            .collect();
        match &self.backend {
            Backend::Replay => self.sample_replay(params, &digests),
            Backend::Simulated(config) => self.sample_sim(prompt, params, &digests, config, sim),
            Backend::Live(live) => self.sample_live(live, prompt, params, &digests),
        }
    }

    fn from_cache(&self, digest: &str, params: &SamplingParams) -> Option<Sampled> {
        let cache = self.cache.as_ref()?;
        let store = cache.lock().unwrap();
        let rec = store.get(digest)?;
        let text = rec.completions.first()?.clone();
        Some(Sampled {
            text,
            provenance: TeacherProvenance {
                backend: rec.backend,
                model_id: params.model_id.clone(),
                temperature: params.temperature,
                request_hash: digest.to_string(),
                timestamp: rec.timestamp.clone(),
            },
        })
    }

    fn record(
        &self,
        digest: &str,
        prompt: &str,
        params: &SamplingParams,
        sample_index: u32,
        text: &str,
        backend: TeacherBackendKind,
        timestamp: &str,
    ) -> Result<(), GatewayError> {
        if let Some(cache) = &self.cache {
            let appended = cache.lock().unwrap().record(CacheRecord {
                request_hash: digest.to_string(),
                prompt: prompt.to_string(),
                params: params.clone(),
                sample_index,
                completions: vec![text.to_string()],
                backend,
                timestamp: timestamp.to_string(),
            })?;
            if appended {
                self.counters.cache_appends.fetch_add(1, Ordering::Relaxed);
            }
        }
        Ok(())
    }

    fn sample_replay(
        &self,
        params: &SamplingParams,
        digests: &[String],
    ) -> Result<Vec<Sampled>, GatewayError> {
        let mut out = Vec::with_capacity(digests.len());
        for digest in digests {
            let hit = self
                .from_cache(digest, params)
                .ok_or_else(|| GatewayError::CacheMiss { digest: digest.clone() })?;
            self.counters.cache_hits.fetch_add(1, Ordering::Relaxed);
            out.push(hit);
        }
        Ok(out)
    }

    fn sample_sim(
        &self,
        prompt: &str,
        params: &SamplingParams,
        digests: &[String],
        config: &SimulatedTeacherConfig,
        sim: Option<SimRequest<'_>>,
    ) -> Result<Vec<Sampled>, GatewayError> {
        let request = sim.ok_or(GatewayError::SimulatorNeedsContext)?;
        let mut out = Vec::with_capacity(digests.len());
        for (i, digest) in digests.iter().enumerate() {
            let text = match request {
                SimRequest::Cot { instance } => simulate_cot(instance, config, i as u32)?,
                SimRequest::SelfEval { subject, truth_is_correct } => {
                    simulate_self_eval(subject, truth_is_correct, config, i as u32)?
                }
            };
            self.counters.sim_draws.fetch_add(1, Ordering::Relaxed);
            self.record(
                digest,
                prompt,
                params,
                i as u32,
                &text,
                TeacherBackendKind::Simulated,
                SIM_TIMESTAMP,
            )?;
            out.push(Sampled {
                text,
                provenance: TeacherProvenance {
                    backend: TeacherBackendKind::Simulated,
                    model_id: params.model_id.clone(),
                    temperature: params.temperature,
                    request_hash: digest.clone(),
                    timestamp: SIM_TIMESTAMP.to_string(),
                },
            });
        }
        Ok(out)
    }

    fn sample_live(
        &self,
        live: &LiveBackend,
        prompt: &str,
        params: &SamplingParams,
        digests: &[String],
    ) -> Result<Vec<Sampled>, GatewayError> {
        // Warm start: an interrupted harvest left these completions behind.
        if self.cache.is_some() {
            let cached: Vec<Option<Sampled>> =
                digests.iter().map(|d| self.from_cache(d, params)).collect();
            if cached.iter().all(Option::is_some) {
                self.counters.cache_hits.fetch_add(digests.len() as u64, Ordering::Relaxed);
                return Ok(cached.into_iter().map(Option::unwrap).collect());
            }
        }

        let texts = live.semaphore.run(|| self.request_with_retry(live, prompt, params))?;
        if texts.len() != params.n_samples as usize {
            return Err(GatewayError::BadResponse(format!(
                "asked for {} completions, endpoint returned {}",
                params.n_samples,
                texts.len()
            )));
        }
        let timestamp = rfc3339_utc(self.clock.now_millis());
        let mut out = Vec::with_capacity(texts.len());
        for (i, text) in texts.into_iter().enumerate() {
            let digest = &digests[i];
            self.record(
                digest,
                prompt,
                params,
                i as u32,
                &text,
                TeacherBackendKind::Live,
                &timestamp,
            )?;
            out.push(Sampled {
                text,
                provenance: TeacherProvenance {
                    backend: TeacherBackendKind::Live,
                    model_id: params.model_id.clone(),
                    temperature: params.temperature,
                    request_hash: digest.clone(),
                    timestamp: timestamp.clone(),
                },
            });
        }
        Ok(out)
    }

    fn request_with_retry(
        &self,
        live: &LiveBackend,
        prompt: &str,
        params: &SamplingParams,
    ) -> Result<Vec<String>, GatewayError> {
        let url = format!("{}/chat/completions", live.base_url);
        let body = serde_json::json!({
            "model": params.model_id,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "n": params.n_samples,
            "max_tokens": params.max_tokens,
        });
        let mut last_status: Option<u16> = None;
        let mut last_message = String::new();
        for attempt in 0..live.retry.max_attempts {
            if attempt > 0 {
                self.clock.sleep_millis(live.retry.delay_ms(attempt - 1));
            }
            if let Some(limiter) = &live.limiter {
                limiter.acquire(self.clock.as_ref());
            }
            self.counters.live_requests.fetch_add(1, Ordering::Relaxed);
            let sent = live
                .client
                .post(&url)
                .bearer_auth(&live.api_key)
                .json(&body)
                .send();
            match sent {
                Ok(response) => {
                    let status = response.status().as_u16();
                    match status {
                        200 => return parse_chat_response(response),
                        401 | 403 => return Err(GatewayError::Auth { status }),
                        429 | 500 | 502 | 503 | 504 => {
                            log::warn!("teacher endpoint returned {status}, attempt {attempt}");
                            last_status = Some(status);
                        }
                        other => {
                            let text = response.text().unwrap_or_default();
                            return Err(GatewayError::BadResponse(format!(
                                "unexpected HTTP {other}: {}",
                                text.chars().take(200).collect::<String>()
                            )));
                        }
                    }
                }
                Err(e) => {
                    log::warn!("teacher transport error, attempt {attempt}: {e}");
                    last_message = e.to_string();
                }
            }
        }
        match last_status {
            Some(status) => Err(GatewayError::RateLimitExhausted {
                attempts: live.retry.max_attempts,
                last_status: status,
            }),
            None => Err(GatewayError::Transport {
                attempts: live.retry.max_attempts,
                message: last_message,
            }),
        }
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

fn parse_chat_response(response: reqwest::blocking::Response) -> Result<Vec<String>, GatewayError> {
    let parsed: ChatResponse =
        response.json().map_err(|e| GatewayError::BadResponse(e.to_string()))?;
    Ok(parsed.choices.into_iter().map(|c| c.message.content).collect())
}
