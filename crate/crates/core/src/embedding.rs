//! Embedding vectors and the backends that produce them.
//!
//! Vectors are L2-normalized once when they are created so that cosine
//! similarity reduces to a dot product at query time. The zero vector is a
//! legal embedding (empty or all-punctuation text) and scores 0 against
//! everything.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use twox_hash::XxHash64;

use crate::corpus::tokenize;
use crate::scalar::Scalar;
use crate::transport::{JsonClient, TransportError};
use crate::DEFAULT_DIM;

/// Tolerance on the L2 norm of a stored non-zero vector.
pub const NORM_TOLERANCE: f64 = 1e-6;

/// Seed of the feature-hashing reference embedder.
pub const REFERENCE_HASH_SEED: u64 = 0x5EED_CAFE;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("vector contains a non-finite value at position {0}")]
    NonFinite(usize),
    #[error("vector norm {0} is neither 0 nor 1")]
    NotNormalized(f64),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("embedding backend returned {got} vectors for {sent} texts")]
    CountMismatch { sent: usize, got: usize },
}

impl EmbeddingError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, EmbeddingError::Transport(t) if t.is_retryable())
    }
}

/// A fixed-dimension vector that is either unit-length or all zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector<S> {
    values: Vec<S>,
}

impl<S: Scalar> EmbeddingVector<S> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![S::zero(); dim],
        }
    }

    /// Wraps values that are already normalized, checking the invariant.
    pub fn from_normalized(values: Vec<S>) -> Result<Self, EmbeddingError> {
        check_finite(&values)?;
        let norm = l2_norm(&values);
        if norm != 0.0 && (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(EmbeddingError::NotNormalized(norm));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn into_values(self) -> Vec<S> {
        self.values
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| v.is_zero())
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }

    /// Dot product accumulated in `f64`.
    pub fn dot(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.widen() * b.widen())
            .sum()
    }

    pub fn cast<T: Scalar>(&self) -> EmbeddingVector<T> {
        EmbeddingVector {
            values: self.values.iter().map(|v| T::narrow(v.widen())).collect(),
        }
    }
}

fn check_finite<S: Scalar>(values: &[S]) -> Result<(), EmbeddingError> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(EmbeddingError::NonFinite(i)),
        None => Ok(()),
    }
}

fn l2_norm<S: Scalar>(values: &[S]) -> f64 {
    values
        .iter()
        .map(|v| {
            let x = v.widen();
            x * x
        })
        .sum::<f64>()
        .sqrt()
}

/// Scales `raw` to unit length; the zero vector maps to itself.
pub fn l2_normalize<S: Scalar>(raw: Vec<S>) -> Result<EmbeddingVector<S>, EmbeddingError> {
    check_finite(&raw)?;
    let norm = l2_norm(&raw);
    if norm == 0.0 {
        return Ok(EmbeddingVector { values: raw });
    }
    if !norm.is_finite() {
        // Squares overflowed; rescale by the max magnitude first.
        let max = raw.iter().map(|v| v.widen().abs()).fold(0.0, f64::max);
        let scaled: Vec<f64> = raw.iter().map(|v| v.widen() / max).collect();
        return l2_normalize(scaled).map(|v| v.cast());
    }
    Ok(EmbeddingVector {
        values: raw.into_iter().map(|v| S::narrow(v.widen() / norm)).collect(),
    })
}

/// Identifies the model behind an index so it is never queried with a
/// different embedder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedderDescriptor {
    pub id: String,
    pub dim: usize,
}

/// A text embedding backend. Implementations return raw vectors; callers
/// normalize through [`embed_text`] / [`embed_batch`].
pub trait Embedder: Send + Sync {
    fn descriptor(&self) -> &EmbedderDescriptor;

    fn embed_raw(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbeddingError>;
}

pub fn embed_text<S: Scalar>(
    backend: &dyn Embedder,
    text: &str,
) -> Result<EmbeddingVector<S>, EmbeddingError> {
    let mut out = embed_batch(backend, &[text])?;
    Ok(out.pop().expect("one vector per text"))
}

pub fn embed_batch<S: Scalar>(
    backend: &dyn Embedder,
    texts: &[&str],
) -> Result<Vec<EmbeddingVector<S>>, EmbeddingError> {
    let dim = backend.descriptor().dim;
    let raw = backend.embed_raw(texts)?;
    if raw.len() != texts.len() {
        return Err(EmbeddingError::CountMismatch {
            sent: texts.len(),
            got: raw.len(),
        });
    }
    raw.into_iter()
        .map(|v| {
            if v.len() != dim {
                return Err(EmbeddingError::DimMismatch {
                    expected: dim,
                    actual: v.len(),
                });
            }
            l2_normalize(v).map(|e| e.cast())
        })
        .collect()
}

/// Deterministic feature-hashing embedder.
///
/// Each lowercased token is hashed with XXH64 under [`REFERENCE_HASH_SEED`];
/// `hash % dim` picks the bucket and the next bit of the hash, `(hash / dim) & 1`,
/// picks the sign. Token order does not matter.
#[derive(Debug, Clone)]
pub struct ReferenceEmbedder {
    descriptor: EmbedderDescriptor,
}

impl Default for ReferenceEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIM)
    }
}

impl ReferenceEmbedder {
    pub const ID_PREFIX: &'static str = "reference-hash-xxh64";

    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self {
            descriptor: EmbedderDescriptor {
                id: format!("{}-{dim}", Self::ID_PREFIX),
                dim,
            },
        }
    }

    pub fn accumulate(&self, text: &str) -> Vec<f64> {
        let dim = self.descriptor.dim as u64;
        let mut acc = vec![0.0f64; self.descriptor.dim];
        for token in tokenize(text) {
            let lower = token.text.to_lowercase();
            let h = XxHash64::oneshot(REFERENCE_HASH_SEED, lower.as_bytes());
            let bucket = (h % dim) as usize;
            let sign = if (h / dim) & 1 == 1 { 1.0 } else { -1.0 };
            acc[bucket] += sign;
        }
        acc
    }
}

impl Embedder for ReferenceEmbedder {
    fn descriptor(&self) -> &EmbedderDescriptor {
        &self.descriptor
    }

    fn embed_raw(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        Ok(texts.iter().map(|t| self.accumulate(t)).collect())
    }
}

/// Reference embedding at the default dimension.
pub fn reference_embed<S: Scalar>(text: &str) -> EmbeddingVector<S> {
    let e = ReferenceEmbedder::default();
    l2_normalize(e.accumulate(text))
        .expect("hash counts are finite")
        .cast()
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    dim: usize,
    vectors: Vec<Vec<f64>>,
}

/// Client for a local sentence-embedding server speaking
/// `POST /embed {"texts": [...]}` → `{"dim", "vectors"}`.
#[derive(Debug)]
pub struct HttpEmbedder {
    descriptor: EmbedderDescriptor,
    client: JsonClient,
}

impl HttpEmbedder {
    pub fn new(endpoint: &str, id: Option<&str>, dim: usize) -> Result<Self, EmbeddingError> {
        let client = JsonClient::new(endpoint, Duration::from_secs(120), 1)?;
        let id = id
            .map(str::to_string)
            .unwrap_or_else(|| format!("http:{}", client.base()));
        Ok(Self {
            descriptor: EmbedderDescriptor { id, dim },
            client,
        })
    }
}

impl Embedder for HttpEmbedder {
    fn descriptor(&self) -> &EmbedderDescriptor {
        &self.descriptor
    }

    fn embed_raw(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        let resp: EmbedResponse = self.client.post("/embed", &EmbedRequest { texts })?;
        if resp.dim != self.descriptor.dim {
            return Err(EmbeddingError::DimMismatch {
                expected: self.descriptor.dim,
                actual: resp.dim,
            });
        }
        Ok(resp.vectors)
    }
}
