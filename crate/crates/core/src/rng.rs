//! Counter-based random streams.
//!
//! Every stochastic step draws from a ChaCha stream whose key is a hash of
//! `(seed, path)`, where the path names the replicate, the pipeline step and
//! the imputation index. Streams therefore never depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha12Rng;

/// Hierarchical identifier of a random stream.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StreamId {
    seed: u64,
    path: Vec<(String, u64)>,
}

impl StreamId {
    pub fn root(seed: u64) -> Self {
        StreamId {
            seed,
            path: Vec::new(),
        }
    }

    /// Stream for replicate `k`.
    pub fn replicate(seed: u64, k: u64) -> Self {
        Self::root(seed).child("replicate", k)
    }

    pub fn child(&self, tag: &str, index: u64) -> Self {
        let mut path = self.path.clone();
        path.push((tag.to_owned(), index));
        StreamId {
            seed: self.seed,
            path,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self) -> &[(String, u64)] {
        &self.path
    }

    pub fn rng(&self) -> StreamRng {
        let mut hasher = Sha256::new();
        hasher.update(b"twophase-stream-v1");
        hasher.update(self.seed.to_le_bytes());
        for (tag, index) in &self.path {
            hasher.update((tag.len() as u64).to_le_bytes());
            hasher.update(tag.as_bytes());
            hasher.update(index.to_le_bytes());
        }
        let key: [u8; 32] = hasher.finalize().into();
        ChaCha12Rng::from_seed(key)
    }
}
