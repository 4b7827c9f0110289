//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! seeded from `(seed, stream)` through a SplitMix64 finaliser, so substreams
//! are reproducible and independent of execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a seed with a stream label.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix(splitmix(seed) ^ stream.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

pub fn substream(seed: u64, stream: u64) -> SimRng {
    SimRng::seed_from_u64(derive_seed(seed, stream))
}

/// Stable label for string-keyed streams (FNV-1a).
pub fn label(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

pub(crate) mod streams {
    pub const ESTIMATOR: u64 = 1;
    pub const RESERVOIR: u64 = 2;
    pub const DATA: u64 = 3;
    pub const TRIAL: u64 = 4;
    pub const FEATURES: u64 = 5;
    pub const TRAJECTORY: u64 = 6;
    pub const POWER: u64 = 7;
}
