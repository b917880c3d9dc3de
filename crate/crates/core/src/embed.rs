//! Entity encoders: the provider contract, the deterministic n-gram fallback,
//! and the little-endian vector matrix file shared with the index.

use std::collections::HashMap;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::fnv1a64;
use crate::scalar::Scalar;

pub const DEFAULT_FALLBACK_DIM: usize = 256;
pub const FALLBACK_PROVIDER: &str = "fallback";

/// Allowed deviation of a vector's L2 norm from 1.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

const BOUNDARY_START: char = 'ˆ';
const BOUNDARY_END: char = '$';
const NGRAM_ORDERS: [usize; 3] = [3, 4, 5];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("vector has a zero or non-finite norm")]
    DegenerateVector,
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("embedding provider protocol error: {0}")]
    ProviderProtocolError(String),
}

/// A unit-norm encoding of one normalized surface form.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector<S> {
    values: Vec<S>,
}

impl<S: Scalar> EmbeddingVector<S> {
    /// Scale `values` to unit L2 norm.
    pub fn normalized(mut values: Vec<S>) -> Result<Self, EmbedError> {
        let norm = values.iter().map(|&v| v * v).sum::<S>().sqrt();
        if !norm.is_finite() || norm <= S::zero() {
            return Err(EmbedError::DegenerateVector);
        }
        for v in &mut values {
            *v = *v / norm;
        }
        Ok(Self { values })
    }

    /// Accept `values` as-is if they are finite and already unit norm within
    /// `tolerance`.
    pub fn from_unit(values: Vec<S>, tolerance: f64) -> Result<Self, EmbedError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::DegenerateVector);
        }
        let norm = values.iter().map(|&v| v * v).sum::<S>().sqrt().as_f64();
        if (norm - 1.0).abs() > tolerance {
            return Err(EmbedError::DegenerateVector);
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

    pub fn norm(&self) -> S {
        self.values.iter().map(|&v| v * v).sum::<S>().sqrt()
    }

    pub fn negated(&self) -> Self {
        Self {
            values: self.values.iter().map(|&v| -v).collect(),
        }
    }
}

#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut acc = S::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc = acc + x * y;
    }
    acc
}

/// Dot product of two unit vectors, i.e. their cosine similarity.
pub fn similarity<S: Scalar>(a: &EmbeddingVector<S>, b: &EmbeddingVector<S>) -> Result<S, EmbedError> {
    if a.dim() != b.dim() {
        return Err(EmbedError::DimMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    Ok(dot(&a.values, &b.values))
}

/// Encoder contract. Implementations are deterministic for a fixed identity,
/// preserve input order, and return unit vectors of `dim()` entries.
pub trait EmbeddingProvider<S: Scalar>: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector<S>>, EmbedError>;

    fn embed_one(&self, text: &str) -> Result<EmbeddingVector<S>, EmbedError> {
        let mut out = self.embed_batch(&[text.to_string()])?;
        out.pop()
            .ok_or_else(|| EmbedError::ProviderProtocolError("empty response".into()))
    }
}

impl<S: Scalar, P: EmbeddingProvider<S> + ?Sized> EmbeddingProvider<S> for &P {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector<S>>, EmbedError> {
        (**self).embed_batch(texts)
    }
}

impl<S: Scalar, P: EmbeddingProvider<S> + ?Sized> EmbeddingProvider<S> for std::sync::Arc<P> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector<S>>, EmbedError> {
        (**self).embed_batch(texts)
    }
}

impl<S: Scalar, P: EmbeddingProvider<S> + ?Sized> EmbeddingProvider<S> for Box<P> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector<S>>, EmbedError> {
        (**self).embed_batch(texts)
    }
}

/// Character n-grams (n = 3, 4, 5) of the boundary-marked text. Marked text
/// shorter than 3 characters is a single gram.
pub fn char_ngrams(text: &str) -> Vec<String> {
    let marked: Vec<char> = std::iter::once(BOUNDARY_START)
        .chain(text.chars())
        .chain(std::iter::once(BOUNDARY_END))
        .collect();
    if marked.len() < NGRAM_ORDERS[0] {
        return vec![marked.into_iter().collect()];
    }
    let mut grams = Vec::new();
    for n in NGRAM_ORDERS {
        grams.extend(marked.windows(n).map(|w| w.iter().collect::<String>()));
    }
    grams
}

/// Hashed character n-gram counts, L2-normalized.
pub fn fallback_embed<S: Scalar>(text: &str, dim: usize) -> Result<EmbeddingVector<S>, EmbedError> {
    if text.is_empty() {
        return Err(EmbedError::EmptyText);
    }
    assert!(dim > 0, "embedding dimension must be positive");
    let mut counts = vec![0u32; dim];
    for gram in char_ngrams(text) {
        counts[(fnv1a64(gram.as_bytes()) % dim as u64) as usize] += 1;
    }
    EmbeddingVector::normalized(counts.into_iter().map(|c| S::of(f64::from(c))).collect())
}

/// Deterministic stand-in encoder for when no language model is available.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FallbackEmbedder {
    dim: usize,
}

impl FallbackEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }
}

impl Default for FallbackEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_FALLBACK_DIM)
    }
}

impl<S: Scalar> EmbeddingProvider<S> for FallbackEmbedder {
    fn name(&self) -> &str {
        FALLBACK_PROVIDER
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector<S>>, EmbedError> {
        texts.iter().map(|t| fallback_embed(t, self.dim)).collect()
    }
}

/// Memoizes a provider by normalized text. Can be seeded from a previous
/// build's vocabulary and vectors.
pub struct CachedProvider<S, P> {
    inner: P,
    cache: std::sync::RwLock<HashMap<String, EmbeddingVector<S>>>,
}

impl<S: Scalar, P: EmbeddingProvider<S>> CachedProvider<S, P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            cache: Default::default(),
        }
    }

    /// Seed with known vectors. Entries with the wrong dimension are skipped.
    pub fn seed(&self, entries: impl IntoIterator<Item = (String, EmbeddingVector<S>)>) {
        let dim = self.inner.dim();
        let mut cache = self.cache.write().expect("embedding cache poisoned");
        for (text, vector) in entries {
            if vector.dim() == dim {
                cache.insert(text, vector);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.cache.read().expect("embedding cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<S: Scalar, P: EmbeddingProvider<S>> EmbeddingProvider<S> for CachedProvider<S, P> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector<S>>, EmbedError> {
        let mut out: Vec<Option<EmbeddingVector<S>>> = {
            let cache = self.cache.read().expect("embedding cache poisoned");
            texts.iter().map(|t| cache.get(t).cloned()).collect()
        };
        let missing: Vec<String> = texts
            .iter()
            .zip(&out)
            .filter(|(_, v)| v.is_none())
            .map(|(t, _)| t.clone())
            .collect();
        if !missing.is_empty() {
            let fresh = self.inner.embed_batch(&missing)?;
            let mut cache = self.cache.write().expect("embedding cache poisoned");
            let mut fresh = fresh.into_iter();
            for (slot, text) in out.iter_mut().zip(texts) {
                if slot.is_none() {
                    let v = fresh.next().ok_or_else(|| {
                        EmbedError::ProviderProtocolError("short batch response".into())
                    })?;
                    cache.insert(text.clone(), v.clone());
                    *slot = Some(v);
                }
            }
        }
        Ok(out.into_iter().map(|v| v.expect("filled above")).collect())
    }
}

/// Header line of a vector matrix file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixHeader {
    pub dim: usize,
    pub count: usize,
    pub provider: String,
}

/// Write a JSON header line followed by `count × dim` little-endian f32 values.
pub fn write_matrix<S: Scalar, W: Write>(
    mut out: W,
    header: &MatrixHeader,
    rows: &[S],
) -> io::Result<()> {
    assert_eq!(rows.len(), header.dim * header.count, "matrix shape");
    serde_json::to_writer(&mut out, header)?;
    out.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(rows.len() * 4);
    for &v in rows {
        buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    out.write_all(&buf)?;
    out.flush()
}

pub fn read_matrix<S: Scalar, R: BufRead>(mut input: R) -> io::Result<(MatrixHeader, Vec<S>)> {
    let mut line = Vec::new();
    input.read_until(b'\n', &mut line)?;
    let header: MatrixHeader = serde_json::from_slice(&line)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("matrix header: {e}")))?;
    let expected = header
        .dim
        .checked_mul(header.count)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "matrix too large"))?;
    let mut bytes = Vec::with_capacity(expected);
    input.read_to_end(&mut bytes)?;
    if bytes.len() != expected {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("matrix body has {} bytes, header implies {expected}", bytes.len()),
        ));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| S::of(f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))))
        .collect();
    Ok((header, values))
}
