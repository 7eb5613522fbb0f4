//! Sentence embedder interface and the deterministic toy implementation:
//! hashed bag-of-words, L2-normalized.

use super::reward::fnv1a64;

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Vec<f64>;
    fn dim(&self) -> usize;
}

/// Hashed bag-of-words embedder. Word order does not matter; empty text
/// maps to the zero vector, everything else to a unit vector.
#[derive(Debug, Clone)]
pub struct HashedBowEmbedder {
    dim: usize,
}

impl HashedBowEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedder dimension must be positive");
        Self { dim }
    }

    /// Bucket index a single word hashes to.
    pub fn bucket(&self, word: &str) -> usize {
        (fnv1a64(word.as_bytes()) % self.dim as u64) as usize
    }
}

impl Default for HashedBowEmbedder {
    fn default() -> Self {
        Self::new(256)
    }
}

impl Embedder for HashedBowEmbedder {
    fn embed(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for word in text.split_whitespace() {
            v[self.bucket(word)] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut v {
                *x /= norm;
            }
        }
        v
    }

    fn dim(&self) -> usize {
        self.dim
    }
}
