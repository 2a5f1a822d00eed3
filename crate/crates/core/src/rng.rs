//! Counter-based random streams.
//!
//! Every random draw in the benchmark is addressed by `(experiment seed,
//! stream name, counter)`. Two draws with the same address are bitwise
//! identical no matter which thread performs them or in which order, so
//! data-parallel augmentation and seed fan-out cannot change results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(GOLDEN);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// 64-bit FNV-1a; stable across platforms and toolchains.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngPolicy {
    pub experiment_seed: u64,
}

impl RngPolicy {
    pub fn new(experiment_seed: u64) -> Self {
        Self { experiment_seed }
    }

    /// Seed for the draw at `(stream, counter)`.
    pub fn derive_seed(&self, stream: &str, counter: u64) -> u64 {
        let s = splitmix64(self.experiment_seed ^ splitmix64(fnv1a64(stream.as_bytes())));
        splitmix64(s ^ counter.wrapping_mul(GOLDEN))
    }

    pub fn rng(&self, stream: &str, counter: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.derive_seed(stream, counter))
    }

    /// A policy whose seed is itself derived; used to hand independent
    /// sub-streams to components (environments, augmenters, initializers).
    pub fn child(&self, stream: &str, counter: u64) -> RngPolicy {
        RngPolicy::new(self.derive_seed(stream, counter))
    }
}
