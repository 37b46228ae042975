//! Embedding vectors, the cosine-similarity kernel, and embedding providers.
//!
//! Two providers ship with the crate: [`HashEmbedder`], a deterministic
//! signed feature-hashing embedder that needs no model or network, and
//! [`RemoteEmbedder`], which delegates to an HTTP service speaking
//! `{"texts": [...]}` → `{"vectors": [[...], ...]}`.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Norms below this are treated as zero.
pub const ZERO_NORM_EPS: f64 = 1e-12;

/// Dimension of the sentence-embedding space used by default.
pub const DEFAULT_DIM: usize = 768;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("vector has zero norm")]
    ZeroVector,
    #[error("no alphanumeric tokens in text")]
    EmptyText,
    #[error("vector contains non-finite values")]
    NonFinite,
    #[error("embedding dimension must be at least {min}, got {got}")]
    InvalidDimension { min: usize, got: usize },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

/// A dense embedding. Never empty and never contains NaN or infinities.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::InvalidDimension { min: 1, got: 0 });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        Ok(Vector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self, EmbedError> {
        Vector::new(self.0.iter().map(|v| v * factor).collect())
    }
}

impl<'de> Deserialize<'de> for Vector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let values = Vec::<f64>::deserialize(d)?;
        Vector::new(values).map_err(serde::de::Error::custom)
    }
}

/// A cosine similarity, always within [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct SimilarityScore(f64);

impl SimilarityScore {
    /// Clamps into [-1, 1]; NaN maps to 0.
    pub fn new(value: f64) -> Self {
        if value.is_nan() {
            SimilarityScore(0.0)
        } else {
            SimilarityScore(value.clamp(-1.0, 1.0))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

pub fn cosine_similarity(a: &Vector, b: &Vector) -> Result<SimilarityScore, EmbedError> {
    if a.dim() != b.dim() {
        return Err(EmbedError::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na < ZERO_NORM_EPS || nb < ZERO_NORM_EPS {
        return Err(EmbedError::ZeroVector);
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok(SimilarityScore::new(dot / (na * nb)))
}

type BatchSlot = Mutex<Option<Result<Vec<Vector>, EmbedError>>>;

pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;

    /// Names the backend; recorded in the goal-vector cache.
    fn identity(&self) -> String;

    /// One vector per input, in input order.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vector>, EmbedError>;
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Signed feature hashing over lower-cased alphanumeric tokens, L2-normalised.
pub fn hash_embed(text: &str, dim: usize) -> Result<Vector, EmbedError> {
    if dim < 2 {
        return Err(EmbedError::InvalidDimension { min: 2, got: dim });
    }
    let lowered = text.to_lowercase();
    let mut values = vec![0.0f64; dim];
    let mut tokens = 0usize;
    for token in lowered
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
    {
        let h = fnv1a64(token.as_bytes());
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        values[(h % dim as u64) as usize] += sign;
        tokens += 1;
    }
    if tokens == 0 {
        return Err(EmbedError::EmptyText);
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    // Colliding tokens of opposite sign can cancel out completely.
    if norm < ZERO_NORM_EPS {
        return Err(EmbedError::ZeroVector);
    }
    values.iter_mut().for_each(|v| *v /= norm);
    Vector::new(values)
}

#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Result<Self, EmbedError> {
        if dim < 2 {
            return Err(EmbedError::InvalidDimension { min: 2, got: dim });
        }
        Ok(HashEmbedder { dim })
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn identity(&self) -> String {
        format!("hash-fnv1a64-{}", self.dim)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vector>, EmbedError> {
        texts.par_iter().map(|t| hash_embed(t, self.dim)).collect()
    }
}

/// Counting semaphore bounding in-flight HTTP requests.
struct Semaphore {
    permits: Mutex<usize>,
    available: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(permits: usize) -> Self {
        Semaphore {
            permits: Mutex::new(permits),
            available: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.available.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.available.notify_one();
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Client for an HTTP embedding service. Large inputs are split into
/// batches; at most `max_in_flight` requests are outstanding at any time,
/// across all concurrent callers.
pub struct RemoteEmbedder {
    endpoint: String,
    dim: usize,
    batch_size: usize,
    client: reqwest::blocking::Client,
    gate: Semaphore,
    max_in_flight: usize,
}

impl RemoteEmbedder {
    pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;
    pub const DEFAULT_BATCH_SIZE: usize = 64;

    pub fn new(endpoint: impl Into<String>, dim: usize) -> Result<Self, EmbedError> {
        Self::with_options(
            endpoint,
            dim,
            Self::DEFAULT_MAX_IN_FLIGHT,
            Self::DEFAULT_BATCH_SIZE,
            Duration::from_secs(120),
        )
    }

    pub fn with_options(
        endpoint: impl Into<String>,
        dim: usize,
        max_in_flight: usize,
        batch_size: usize,
        timeout: Duration,
    ) -> Result<Self, EmbedError> {
        if dim == 0 {
            return Err(EmbedError::InvalidDimension { min: 1, got: 0 });
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EmbedError::Transport(e.to_string()))?;
        let max_in_flight = max_in_flight.max(1);
        Ok(RemoteEmbedder {
            endpoint: endpoint.into(),
            dim,
            batch_size: batch_size.max(1),
            client,
            gate: Semaphore::new(max_in_flight),
            max_in_flight,
        })
    }

    fn post_batch(&self, texts: &[String]) -> Result<Vec<Vector>, EmbedError> {
        let _permit = self.gate.acquire();
        let resp = self
            .client
            .post(&self.endpoint)
            .json(&EmbedRequest { texts })
            .send()
            .map_err(|e| EmbedError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(EmbedError::Transport(format!(
                "embedding service returned HTTP {status}"
            )));
        }
        let body: EmbedResponse = resp
            .json()
            .map_err(|e| EmbedError::Protocol(format!("bad response body: {e}")))?;
        if body.vectors.len() != texts.len() {
            return Err(EmbedError::Protocol(format!(
                "expected {} vectors, got {}",
                texts.len(),
                body.vectors.len()
            )));
        }
        body.vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.dim {
                    return Err(EmbedError::DimensionMismatch {
                        expected: self.dim,
                        found: v.len(),
                    });
                }
                Vector::new(v).map_err(|_| EmbedError::Protocol("non-finite vector value".into()))
            })
            .collect()
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn identity(&self) -> String {
        format!("remote:{}", self.endpoint)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vector>, EmbedError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let batches: Vec<&[String]> = texts.chunks(self.batch_size).collect();
        let results: Vec<BatchSlot> =
            batches.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = self.max_in_flight.min(batches.len());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= batches.len() {
                        break;
                    }
                    let outcome = self.post_batch(batches[i]);
                    let failed = outcome.is_err();
                    *results[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(outcome);
                    if failed {
                        // Stop handing out further batches.
                        next.store(batches.len(), Ordering::SeqCst);
                    }
                });
            }
        });
        let mut out = Vec::with_capacity(texts.len());
        for slot in results {
            match slot.into_inner().unwrap_or_else(|e| e.into_inner()) {
                Some(Ok(vectors)) => out.extend(vectors),
                Some(Err(e)) => return Err(e),
                None => continue,
            }
        }
        if out.len() != texts.len() {
            return Err(EmbedError::Protocol("embedding batches incomplete".into()));
        }
        Ok(out)
    }
}

/// Embeds `texts` through the service at `endpoint`, expecting `dim`-dimensional vectors.
pub fn remote_embed(
    endpoint: &str,
    texts: &[String],
    dim: usize,
) -> Result<Vec<Vector>, EmbedError> {
    RemoteEmbedder::new(endpoint, dim)?.embed(texts)
}
