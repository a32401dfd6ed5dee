//! Counter-based random streams.
//!
//! A root seed and a purpose label are hashed into a ChaCha8 key; the
//! 64-bit stream id of the cipher then selects an independent substream per
//! index (path, step, sample). Results never depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Keyed family of substreams `module:purpose:index`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Streams {
    key: [u8; 32],
}

impl Streams {
    pub fn new(seed: u64, purpose: &str) -> Self {
        let mut h = Sha256::new();
        h.update(seed.to_le_bytes());
        h.update([0u8]);
        h.update(purpose.as_bytes());
        let out = h.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&out);
        Streams { key }
    }

    /// The generator for substream `index`.
    pub fn rng(&self, index: u64) -> Rng {
        let mut r = ChaCha8Rng::from_seed(self.key);
        r.set_stream(index);
        r
    }

    /// A derived family, e.g. one per Monte-Carlo sample.
    pub fn child(&self, label: &str, index: u64) -> Streams {
        let mut h = Sha256::new();
        h.update(self.key);
        h.update(label.as_bytes());
        h.update(index.to_le_bytes());
        let out = h.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&out);
        Streams { key }
    }

    /// A 64-bit seed derived from this family, for APIs that take plain seeds.
    pub fn seed(&self, index: u64) -> u64 {
        let mut h = Sha256::new();
        h.update(self.key);
        h.update(b"seed");
        h.update(index.to_le_bytes());
        let out = h.finalize();
        u64::from_le_bytes(out[..8].try_into().unwrap())
    }
}

/// Convenience: seed for sample `index` of an experiment rooted at `seed`.
pub fn sub_seed(seed: u64, purpose: &str, index: u64) -> u64 {
    Streams::new(seed, purpose).seed(index)
}
