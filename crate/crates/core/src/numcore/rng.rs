//! Seeded, splittable randomness.
//!
//! Every random stream is a ChaCha8 generator (a counter-mode stream
//! cipher, so output is identical on every platform). Child seeds are
//! derived with the SplitMix64 finalizer over `(parent seed, label)`, which
//! lets independent consumers (initialization, per-epoch shuffles,
//! per-instance masks) draw from non-overlapping streams regardless of the
//! order they run in.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A node in a tree of seeds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SeedTree {
    seed: u64,
}

impl SeedTree {
    pub fn new(seed: u64) -> Self {
        SeedTree { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child identified by `label`.
    pub fn child(&self, label: u64) -> SeedTree {
        SeedTree { seed: splitmix64(self.seed ^ splitmix64(label.wrapping_mul(GOLDEN))) }
    }

    /// Child identified by a string label.
    pub fn named(&self, label: &str) -> SeedTree {
        // FNV-1a keeps labels stable across builds.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in label.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        self.child(h)
    }

    pub fn rng(&self) -> StreamRng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}
