//! Embedding gateway and similarity arithmetic.
//!
//! Vectors are stored as `f32` and always unit length. Aggregates
//! (centroids, sums) are accumulated in `f64` by the callers.

mod cache;
mod provider;

pub use cache::{cache_key, EmbeddingCache};
pub use provider::{EmbeddingProvider, HashingEmbedder, HttpEmbeddingProvider};

use crate::error::{Error, Result};
use crate::ingest::normalize_text;

/// Provider requests are chunked to this many texts by default.
pub const DEFAULT_BATCH_SIZE: usize = 64;

pub fn dot(u: &[f32], v: &[f32]) -> f64 {
    u.iter().zip(v).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum()
}

pub fn norm(u: &[f32]) -> f64 {
    dot(u, u).sqrt()
}

/// Cosine similarity; errors on dimension mismatch or a zero vector.
pub fn cosine_similarity(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Config(format!("dimension mismatch: {} vs {}", u.len(), v.len())));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Domain("cosine similarity of a zero vector".into()));
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

pub fn cosine_distance(u: &[f32], v: &[f32]) -> Result<f64> {
    cosine_similarity(u, v).map(|s| 1.0 - s)
}

/// Scales `v` to unit length, returning `f32` storage.
pub fn normalize(v: &[f64]) -> Result<Vec<f32>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::Domain("cannot normalize a zero or non-finite vector".into()));
    }
    Ok(v.iter().map(|x| (x / n) as f32).collect())
}

pub fn normalize_f32(v: &[f32]) -> Result<Vec<f32>> {
    let wide: Vec<f64> = v.iter().map(|x| f64::from(*x)).collect();
    normalize(&wide)
}

/// Picks the candidate threshold whose predicate `similarity >= t` best
/// agrees with human similar/dissimilar labels. Ties go to the larger
/// threshold.
pub fn calibrate_threshold(labeled: &[(f64, bool)], candidates: &[f64]) -> Result<f64> {
    if labeled.is_empty() {
        return Err(Error::Domain("no labeled pairs".into()));
    }
    if candidates.is_empty() {
        return Err(Error::Domain("no candidate thresholds".into()));
    }
    let mut best: Option<(usize, f64)> = None;
    for &t in candidates {
        let correct = labeled.iter().filter(|(sim, similar)| (*sim >= t) == *similar).count();
        match best {
            Some((c, bt)) if correct < c || (correct == c && t < bt) => {}
            _ => best = Some((correct, t)),
        }
    }
    Ok(best.map(|(_, t)| t).unwrap())
}

/// Embeds texts through a provider with a content-addressed cache.
pub struct EmbeddingGateway<P: EmbeddingProvider> {
    provider: P,
    cache: EmbeddingCache,
    batch_size: usize,
}

impl<P: EmbeddingProvider> EmbeddingGateway<P> {
    pub fn new(provider: P, cache: EmbeddingCache) -> Result<Self> {
        if let Some(d) = cache.dim() {
            if d != provider.dim() {
                return Err(Error::Config(format!(
                    "cache holds {d}-dimensional vectors but provider `{}` produces {}",
                    provider.id(),
                    provider.dim()
                )));
            }
        }
        Ok(Self {
            provider,
            cache,
            batch_size: DEFAULT_BATCH_SIZE,
        })
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    pub fn cache(&self) -> &EmbeddingCache {
        &self.cache
    }

    pub fn into_cache(self) -> EmbeddingCache {
        self.cache
    }

    pub fn provider(&self) -> &P {
        &self.provider
    }

    /// One unit vector per text, in input order. Cached texts never reach
    /// the provider.
    pub fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        if texts.is_empty() {
            return Err(Error::Domain("empty text batch".into()));
        }
        let keys: Vec<String> = texts.iter().map(|t| cache_key(&normalize_text(t))).collect();
        let mut missing: Vec<usize> = Vec::new();
        for (i, key) in keys.iter().enumerate() {
            if self.cache.get(key).is_none() && !missing.iter().any(|&j| keys[j] == *key) {
                missing.push(i);
            }
        }
        for chunk in missing.chunks(self.batch_size) {
            let request: Vec<String> = chunk.iter().map(|&i| texts[i].clone()).collect();
            let vectors = self.provider.embed(&request)?;
            if vectors.len() != request.len() {
                return Err(Error::Parse {
                    message: format!("provider returned {} vectors for {} texts", vectors.len(), request.len()),
                    raw: String::new(),
                });
            }
            for (&i, v) in chunk.iter().zip(vectors) {
                if v.len() != self.provider.dim() {
                    return Err(Error::Config(format!(
                        "provider returned dimension {} but workspace expects {}",
                        v.len(),
                        self.provider.dim()
                    )));
                }
                self.cache.insert(keys[i].clone(), normalize_f32(&v)?)?;
            }
        }
        keys.iter()
            .map(|k| self.cache.get(k).ok_or_else(|| Error::NotFound(format!("cache entry {k}"))))
            .collect()
    }
}
