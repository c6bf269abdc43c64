//! Uniform text-generation interface with on-disk caching, retries and a bound on
//! concurrent requests.

mod http;
mod mock;
mod process;

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::sha256_hex;

pub use http::HttpBackend;
pub use mock::{serve_mock, MockBackend, MockRule, MockScoreRule, MockScript};
pub use process::ProcessBackend;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_new_tokens: u32,
    pub stop_sequences: Vec<String>,
    pub request_tag: String,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>, request_tag: impl Into<String>) -> Self {
        GenerationRequest {
            prompt: prompt.into(),
            temperature: 0.0,
            max_new_tokens: 256,
            stop_sequences: Vec::new(),
            request_tag: request_tag.into(),
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredResponse {
    pub text: String,
    pub mean_token_logprob: Option<f64>,
    pub backend_id: String,
    pub cached: bool,
}

/// What a backend hands back for one generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendOutput {
    pub text: String,
    pub token_logprobs: Option<Vec<f64>>,
}

pub trait Backend: Send + Sync {
    /// Stable identity; part of every cache key.
    fn id(&self) -> String;

    fn generate(&self, request: &GenerationRequest) -> Result<BackendOutput>;

    /// Per-token log-probabilities of `response` conditioned on `prompt`.
    fn score(&self, _prompt: &str, _response: &str) -> Result<Vec<f64>> {
        Err(Error::Capability(format!("backend {} cannot score fixed continuations", self.id())))
    }

    fn embed(&self, _text: &str) -> Result<Vec<f32>> {
        Err(Error::Capability(format!("backend {} does not provide embeddings", self.id())))
    }
}

pub fn mean_logprob(logprobs: &[f64]) -> Option<f64> {
    (!logprobs.is_empty()).then(|| logprobs.iter().sum::<f64>() / logprobs.len() as f64)
}

/// Builds a backend from a spec string:
/// `mock`, `mock:<script.json>`, `http:<base_url>#<model>`, or `process:<command line>`.
pub fn backend_from_spec(spec: &str) -> Result<Box<dyn Backend>> {
    let (kind, rest) = spec.split_once(':').unwrap_or((spec, ""));
    match kind {
        "mock" if rest.is_empty() => Ok(Box::new(MockBackend::new(MockScript::default()))),
        "mock" => Ok(Box::new(MockBackend::from_file(std::path::Path::new(rest))?)),
        "http" => {
            let (base, model) = rest
                .split_once('#')
                .ok_or_else(|| Error::Config(format!("http backend spec `{spec}` needs `<base_url>#<model>`")))?;
            Ok(Box::new(HttpBackend::new(base, model)))
        }
        "process" if !rest.trim().is_empty() => Ok(Box::new(ProcessBackend::spawn(rest)?)),
        _ => Err(Error::Config(format!("unrecognized backend spec `{spec}`"))),
    }
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub attempts: u32,
    pub backoff: Duration,
    pub max_in_flight: usize,
    /// Persist the response cache here; `None` keeps it in memory.
    pub cache_path: Option<PathBuf>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            attempts: 3,
            backoff: Duration::from_millis(200),
            max_in_flight: 4,
            cache_path: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum CacheValue {
    Generation { text: String, mean_token_logprob: Option<f64> },
    Score { mean_token_logprob: f64 },
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    key: String,
    value: CacheValue,
}

struct Cache {
    entries: HashMap<String, CacheValue>,
    path: Option<PathBuf>,
}

impl Cache {
    fn open(path: Option<PathBuf>) -> Result<Self> {
        let mut entries = HashMap::new();
        if let Some(p) = &path {
            if p.exists() {
                let file = std::fs::File::open(p).map_err(|e| Error::io(p, e))?;
                for line in BufReader::new(file).lines() {
                    let line = line.map_err(|e| Error::io(p, e))?;
                    // A torn final line from an interrupted run is skipped.
                    if let Ok(entry) = serde_json::from_str::<CacheLine>(&line) {
                        entries.insert(entry.key, entry.value);
                    }
                }
            }
        }
        Ok(Cache { entries, path })
    }

    fn insert(&mut self, key: String, value: CacheValue) -> Result<()> {
        if let Some(p) = &self.path {
            if let Some(parent) = p.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            let mut f = OpenOptions::new().create(true).append(true).open(p).map_err(|e| Error::io(p, e))?;
            let line = serde_json::to_string(&CacheLine {
                key: key.clone(),
                value: value.clone(),
            })?;
            writeln!(f, "{line}").map_err(|e| Error::io(p, e))?;
        }
        self.entries.insert(key, value);
        Ok(())
    }
}

struct InFlight {
    count: Mutex<usize>,
    freed: Condvar,
    limit: usize,
    peak: AtomicUsize,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn acquire(&self) -> Permit<'_> {
        let mut n = self.count.lock().expect("in-flight lock poisoned");
        while *n >= self.limit {
            n = self.freed.wait(n).expect("in-flight lock poisoned");
        }
        *n += 1;
        self.peak.fetch_max(*n, Ordering::SeqCst);
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.count.lock().expect("in-flight lock poisoned") -= 1;
        self.0.freed.notify_one();
    }
}

pub struct Gateway {
    backend: Box<dyn Backend>,
    backend_id: String,
    config: GatewayConfig,
    cache: Mutex<Cache>,
    in_flight: InFlight,
}

impl Gateway {
    pub fn new(backend: Box<dyn Backend>, config: GatewayConfig) -> Result<Self> {
        if config.max_in_flight == 0 || config.attempts == 0 {
            return Err(Error::Config("gateway needs max_in_flight >= 1 and attempts >= 1".into()));
        }
        let cache = Cache::open(config.cache_path.clone())?;
        Ok(Gateway {
            backend_id: backend.id(),
            backend,
            in_flight: InFlight {
                count: Mutex::new(0),
                freed: Condvar::new(),
                limit: config.max_in_flight,
                peak: AtomicUsize::new(0),
            },
            cache: Mutex::new(cache),
            config,
        })
    }

    pub fn backend_id(&self) -> &str {
        &self.backend_id
    }

    pub fn max_in_flight(&self) -> usize {
        self.config.max_in_flight
    }

    /// Highest number of simultaneous backend calls observed so far.
    pub fn peak_in_flight(&self) -> usize {
        self.in_flight.peak.load(Ordering::SeqCst)
    }

    fn cache_key(&self, kind: &str, fields: serde_json::Value) -> String {
        let material = serde_json::json!({ "backend": self.backend_id, "kind": kind, "fields": fields });
        sha256_hex(material.to_string())
    }

    fn with_retries<T>(&self, tag: &str, mut call: impl FnMut() -> Result<T>) -> Result<T> {
        let mut last = None;
        for attempt in 0..self.config.attempts {
            if attempt > 0 {
                std::thread::sleep(self.config.backoff * 2u32.saturating_pow(attempt - 1));
            }
            let outcome = {
                let _permit = self.in_flight.acquire();
                call()
            };
            match outcome {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() => {
                    log::warn!("request `{tag}` attempt {} failed: {e}", attempt + 1);
                    last = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        Err(Error::Gateway {
            tag: tag.to_owned(),
            message: format!(
                "failed after {} attempts: {}",
                self.config.attempts,
                last.map(|e| e.to_string()).unwrap_or_default()
            ),
        })
    }

    pub fn generate(&self, request: &GenerationRequest) -> Result<ScoredResponse> {
        if request.prompt.is_empty() {
            return Err(Error::Precondition(format!("request `{}` has an empty prompt", request.request_tag)));
        }
        if !(request.temperature >= 0.0) || request.max_new_tokens == 0 {
            return Err(Error::Precondition(format!(
                "request `{}` needs temperature >= 0 and max_new_tokens >= 1",
                request.request_tag
            )));
        }
        let cacheable = request.temperature == 0.0;
        let key = self.cache_key(
            "generate",
            serde_json::json!({
                "prompt": request.prompt,
                "temperature": request.temperature,
                "max_new_tokens": request.max_new_tokens,
                "stop": request.stop_sequences,
            }),
        );
        if cacheable {
            if let Some(CacheValue::Generation { text, mean_token_logprob }) =
                self.cache.lock().expect("cache lock poisoned").entries.get(&key)
            {
                return Ok(ScoredResponse {
                    text: text.clone(),
                    mean_token_logprob: *mean_token_logprob,
                    backend_id: self.backend_id.clone(),
                    cached: true,
                });
            }
        }

        let out = self.with_retries(&request.request_tag, || self.backend.generate(request))?;
        let mean = out.token_logprobs.as_deref().and_then(mean_logprob);
        if cacheable {
            self.cache.lock().expect("cache lock poisoned").insert(
                key,
                CacheValue::Generation {
                    text: out.text.clone(),
                    mean_token_logprob: mean,
                },
            )?;
        }
        Ok(ScoredResponse {
            text: out.text,
            mean_token_logprob: mean,
            backend_id: self.backend_id.clone(),
            cached: false,
        })
    }

    /// Runs requests with at most `max_in_flight` in parallel. Results are returned in
    /// request order regardless of completion order.
    pub fn generate_many(&self, requests: &[GenerationRequest]) -> Vec<Result<ScoredResponse>> {
        crate::fan_out(requests, self.config.max_in_flight, |r| self.generate(r))
    }

    /// Mean log-probability of `response` given `prompt`, without sampling.
    pub fn score_response(&self, prompt: &str, response: &str) -> Result<f64> {
        if response.split_whitespace().next().is_none() {
            return Err(Error::Precondition("cannot score a response with zero tokens".into()));
        }
        let key = self.cache_key("score", serde_json::json!({ "prompt": prompt, "response": response }));
        if let Some(CacheValue::Score { mean_token_logprob }) = self.cache.lock().expect("cache lock poisoned").entries.get(&key) {
            return Ok(*mean_token_logprob);
        }
        let logprobs = self.with_retries("score", || self.backend.score(prompt, response))?;
        let mean = mean_logprob(&logprobs).ok_or_else(|| Error::Capability("backend returned no token scores".into()))?;
        self.cache
            .lock()
            .expect("cache lock poisoned")
            .insert(key, CacheValue::Score { mean_token_logprob: mean })?;
        Ok(mean)
    }

    pub fn embed(&self, text: &str) -> Result<Vec<f32>> {
        self.with_retries("embed", || self.backend.embed(text))
    }
}
