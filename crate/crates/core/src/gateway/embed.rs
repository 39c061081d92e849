use serde::{Deserialize, Serialize};

use super::{EmbeddingProvider, ProviderError};
use crate::text::words;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    dimension: usize,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, dimension: usize) -> Result<Self, String> {
        if dimension == 0 {
            return Err("embedding dimension must be positive".into());
        }
        if values.len() != dimension {
            return Err(format!(
                "embedding has {} values, provider dimension is {dimension}",
                values.len()
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err("embedding contains a non-finite value".into());
        }
        Ok(Self { values, dimension })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }
}

/// Cosine similarity clamped to [0, 1]; zero vectors compare as 0.
///
/// Computed as `dot / sqrt(|a|² |b|²)` so that a vector of integer counts
/// compared with itself gives exactly 1.0.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    if a.dimension != b.dimension {
        return 0.0;
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.values.iter().zip(&b.values) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb).sqrt()).clamp(0.0, 1.0)
}

/// Term-frequency embedding over FNV-1a hashed word buckets.
#[derive(Debug, Clone)]
pub struct HashedTokenEmbedder {
    dimension: usize,
}

impl HashedTokenEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension }
    }
}

impl Default for HashedTokenEmbedder {
    fn default() -> Self {
        Self::new(512)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

impl EmbeddingProvider for HashedTokenEmbedder {
    fn id(&self) -> &str {
        "hashed-token"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, canonical_text: &str) -> Result<Vec<f64>, ProviderError> {
        let mut values = vec![0.0; self.dimension];
        for word in words(canonical_text) {
            let bucket = (fnv1a(word.as_bytes()) % self.dimension as u64) as usize;
            values[bucket] += 1.0;
        }
        Ok(values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_of(text: &str) -> EmbeddingVector {
        let e = HashedTokenEmbedder::default();
        EmbeddingVector::new(e.embed(text).unwrap(), e.dimension()).unwrap()
    }

    #[test]
    fn self_similarity_is_exactly_one() {
        for text in [
            "a",
            "water water consumption",
            "which city had the highest water use in dec 2022",
        ] {
            let v = vec_of(text);
            assert_eq!(cosine_similarity(&v, &v), 1.0);
        }
    }

    #[test]
    fn zero_vector_similarity_is_zero() {
        let zero = EmbeddingVector::new(vec![0.0; 512], 512).unwrap();
        assert_eq!(cosine_similarity(&zero, &vec_of("x")), 0.0);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        assert!(EmbeddingVector::new(vec![1.0; 3], 4).is_err());
        assert!(EmbeddingVector::new(vec![], 0).is_err());
    }
}
