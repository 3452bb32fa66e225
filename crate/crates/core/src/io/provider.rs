//! HTTP client for an external sentence-embedding service, with an on-disk
//! content-addressed cache.
//!
//! Wire contract: `POST {endpoint}` with `{"model": ..., "texts": [...]}`,
//! answered by `{"embeddings": [[...], ...]}` in request order. Status codes
//! of 500 and above and transport failures are retried with exponential
//! backoff; other non-success codes fail immediately. When the configured
//! token variable is set its value is sent as a bearer token.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_TOKEN_ENV: &str = "EMBEDDING_PROVIDER_TOKEN";

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("invalid provider config: {0}")]
    InvalidConfig(String),
    #[error("embedding provider unavailable after {attempts} attempts: {message}")]
    ProviderUnavailable { attempts: u32, message: String },
    #[error("embedding provider rejected the request with status {status}")]
    Rejected { status: u16 },
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("provider returned {got}-dimensional embeddings after {expected}-dimensional ones")]
    DimensionDrift { expected: usize, got: usize },
    #[error("embedding cache {path}: {source}")]
    Cache {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Total attempts per batch, including the first.
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub backoff_base: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            backoff_base: Duration::from_millis(200),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub endpoint: String,
    pub model: String,
    pub timeout: Duration,
    pub max_in_flight: usize,
    pub batch_size: usize,
    pub retry: RetryPolicy,
    pub cache_dir: Option<PathBuf>,
    /// Name of the environment variable holding the bearer token.
    pub token_env: String,
}

impl ProviderConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            timeout: Duration::from_secs(30),
            max_in_flight: 8,
            batch_size: 16,
            retry: RetryPolicy::default(),
            cache_dir: None,
            token_env: DEFAULT_TOKEN_ENV.to_owned(),
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        let bad = |m: &str| Err(ProviderError::InvalidConfig(m.to_owned()));
        if self.endpoint.is_empty() {
            return bad("endpoint is empty");
        }
        if self.model.is_empty() {
            return bad("model is empty");
        }
        if self.timeout.is_zero() {
            return bad("timeout must be positive");
        }
        if self.max_in_flight == 0 || self.batch_size == 0 {
            return bad("max_in_flight and batch_size must be positive");
        }
        if self.retry.max_attempts == 0 {
            return bad("retry.max_attempts must be positive");
        }
        Ok(())
    }
}

/// Vectors stored as `<sha256 hex>.json` under one directory.
#[derive(Debug, Clone)]
pub struct EmbeddingCache {
    dir: PathBuf,
}

impl EmbeddingCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, ProviderError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|source| ProviderError::Cache {
            path: dir.clone(),
            source,
        })?;
        Ok(Self { dir })
    }

    pub fn key(endpoint: &str, model: &str, text: &str) -> String {
        let mut h = Sha256::new();
        h.update(endpoint.as_bytes());
        h.update([0]);
        h.update(model.as_bytes());
        h.update([0]);
        h.update(text.as_bytes());
        hex::encode(h.finalize())
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    /// A missing or unreadable entry is a miss.
    pub fn get(&self, key: &str) -> Option<Vec<f64>> {
        let bytes = std::fs::read(self.path(key)).ok()?;
        match serde_json::from_slice::<Vec<f64>>(&bytes) {
            Ok(v) if !v.is_empty() => Some(v),
            _ => {
                log::warn!("ignoring corrupt cache entry {key}");
                None
            }
        }
    }

    /// Writes to a temporary file in the cache directory and renames it into
    /// place, so readers never observe a partial entry.
    pub fn put(&self, key: &str, vector: &[f64]) -> Result<(), ProviderError> {
        let wrap = |source| ProviderError::Cache {
            path: self.dir.clone(),
            source,
        };
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(wrap)?;
        serde_json::to_writer(&mut tmp, vector).map_err(|e| wrap(e.into()))?;
        tmp.flush().map_err(wrap)?;
        tmp.persist(self.path(key)).map_err(|e| wrap(e.error))?;
        Ok(())
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
}

/// One vector per input text, all of the same dimension.
///
/// Cached texts never reach the network. Distinct uncached texts are sent
/// in batches of `batch_size` by at most `max_in_flight` concurrent workers.
pub fn fetch_embeddings(
    config: &ProviderConfig,
    texts: &[String],
) -> Result<Vec<Vec<f64>>, ProviderError> {
    config.validate()?;
    let cache = config
        .cache_dir
        .as_ref()
        .map(EmbeddingCache::open)
        .transpose()?;

    let mut result: Vec<Option<Vec<f64>>> = vec![None; texts.len()];
    let mut pending: Vec<&str> = Vec::new();
    let mut positions: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, text) in texts.iter().enumerate() {
        if let Some(hit) = cache
            .as_ref()
            .and_then(|c| c.get(&EmbeddingCache::key(&config.endpoint, &config.model, text)))
        {
            result[i] = Some(hit);
            continue;
        }
        let slots = positions.entry(text.as_str()).or_default();
        if slots.is_empty() {
            pending.push(text);
        }
        slots.push(i);
    }

    if !pending.is_empty() {
        let batches: Vec<&[&str]> = pending.chunks(config.batch_size).collect();
        let fetched = run_batches(config, &batches)?;
        for (text, vector) in pending.iter().zip(fetched) {
            if let Some(c) = &cache {
                c.put(&EmbeddingCache::key(&config.endpoint, &config.model, text), &vector)?;
            }
            for &i in &positions[text] {
                result[i] = Some(vector.clone());
            }
        }
    }

    let out: Vec<Vec<f64>> = result
        .into_iter()
        .map(|v| v.expect("every text resolved"))
        .collect();
    check_dimensions(&out)?;
    Ok(out)
}

fn check_dimensions(vectors: &[Vec<f64>]) -> Result<(), ProviderError> {
    if let Some(first) = vectors.first() {
        if let Some(v) = vectors.iter().find(|v| v.len() != first.len()) {
            return Err(ProviderError::DimensionDrift {
                expected: first.len(),
                got: v.len(),
            });
        }
    }
    Ok(())
}

type BatchResult = Result<Vec<Vec<f64>>, ProviderError>;

fn run_batches(
    config: &ProviderConfig,
    batches: &[&[&str]],
) -> Result<Vec<Vec<f64>>, ProviderError> {
    let client = reqwest::blocking::Client::builder()
        .timeout(config.timeout)
        .build()
        .map_err(|e| ProviderError::InvalidConfig(e.to_string()))?;
    let token = std::env::var(&config.token_env)
        .ok()
        .filter(|t| !t.is_empty());

    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<BatchResult>>> =
        Mutex::new((0..batches.len()).map(|_| None).collect());
    let workers = config.max_in_flight.min(batches.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let b = next.fetch_add(1, Ordering::SeqCst);
                if b >= batches.len() {
                    break;
                }
                let outcome = request_with_retry(&client, config, token.as_deref(), batches[b]);
                let failed = outcome.is_err();
                slots.lock().expect("no poisoned workers")[b] = Some(outcome);
                if failed {
                    // Stop handing out further batches.
                    next.store(batches.len(), Ordering::SeqCst);
                    break;
                }
            });
        }
    });

    let mut out = Vec::new();
    for slot in slots.into_inner().expect("no poisoned workers") {
        match slot {
            Some(r) => out.extend(r?),
            // Batches are claimed in order, so skipped ones sit after the failure.
            None => unreachable!("batch skipped without a preceding failure"),
        }
    }
    Ok(out)
}

fn request_with_retry(
    client: &reqwest::blocking::Client,
    config: &ProviderConfig,
    token: Option<&str>,
    texts: &[&str],
) -> Result<Vec<Vec<f64>>, ProviderError> {
    let body = EmbedRequest {
        model: &config.model,
        texts,
    };
    let mut delay = config.retry.backoff_base;
    let mut last = String::new();
    for attempt in 1..=config.retry.max_attempts {
        let mut req = client.post(&config.endpoint).json(&body);
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        match req.send() {
            Ok(resp) if resp.status().is_success() => {
                let parsed: EmbedResponse = resp
                    .json()
                    .map_err(|e| ProviderError::MalformedResponse(e.to_string()))?;
                if parsed.embeddings.len() != texts.len() {
                    return Err(ProviderError::MalformedResponse(format!(
                        "{} embeddings for {} texts",
                        parsed.embeddings.len(),
                        texts.len()
                    )));
                }
                if parsed.embeddings.iter().any(Vec::is_empty) {
                    return Err(ProviderError::MalformedResponse("empty embedding".into()));
                }
                check_dimensions(&parsed.embeddings)?;
                return Ok(parsed.embeddings);
            }
            Ok(resp) if resp.status().is_server_error() => {
                last = format!("status {}", resp.status().as_u16());
            }
            Ok(resp) => {
                return Err(ProviderError::Rejected {
                    status: resp.status().as_u16(),
                })
            }
            // The error text can carry the URL but never request headers.
            Err(e) => last = e.to_string(),
        }
        log::debug!("embedding request attempt {attempt} failed: {last}");
        if attempt < config.retry.max_attempts {
            std::thread::sleep(delay);
            delay = delay.saturating_mul(2);
        }
    }
    Err(ProviderError::ProviderUnavailable {
        attempts: config.retry.max_attempts,
        message: last,
    })
}
