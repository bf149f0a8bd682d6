//! Hierarchical, order-independent random streams.
//!
//! A [`RandomSource`] is a node in a tree of stream keys rooted at a 64-bit
//! master seed. Children are derived by mixing an index into the parent key,
//! so the draws seen at `(seed, stage, run, step)` never depend on how many
//! other streams were consumed before, or on which thread consumed them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator handed to steppers and policies.
pub type StreamRng = ChaCha8Rng;

/// Reserved child indices, kept far from run/step counters.
pub mod tags {
    pub const EPISODE: u64 = u64::MAX;
    pub const SAMPLE: u64 = u64::MAX - 1;
    pub const VALIDATE: u64 = u64::MAX - 2;
    pub const MONTE_CARLO: u64 = u64::MAX - 3;
    pub const IMPORTANCE: u64 = u64::MAX - 4;
    pub const PROBE: u64 = u64::MAX - 5;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RandomSource {
    seed: u64,
    key: u64,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            key: splitmix64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives the child stream at `index`.
    pub fn child(&self, index: u64) -> Self {
        Self {
            seed: self.seed,
            key: splitmix64(self.key ^ splitmix64(index.wrapping_mul(0xD6E8_FEB8_6659_FD93))),
        }
    }

    /// Follows a path of child indices.
    pub fn path(&self, indices: &[u64]) -> Self {
        indices.iter().fold(*self, |src, &i| src.child(i))
    }

    pub fn rng(&self) -> StreamRng {
        ChaCha8Rng::seed_from_u64(self.key)
    }
}
