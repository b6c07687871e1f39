//! Seed derivation for reproducible random substreams.
//!
//! Every stochastic step draws from a ChaCha stream whose seed is a hash of
//! the master seed and a path of indices (iteration, sweep, observation...).
//! Work split across threads therefore sees the same numbers as a sequential
//! run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash of `seed` followed by `path`.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc.rotate_left(23) ^ splitmix64(p)))
}

pub fn stream(seed: u64, path: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, path))
}

/// Domain tags keeping unrelated substreams apart.
pub mod tag {
    pub const SCENARIO: u64 = 1;
    pub const MOMENTS: u64 = 2;
    pub const CHAIN_LOCATION: u64 = 3;
    pub const CHAIN_ETA: u64 = 4;
    pub const SPLIT: u64 = 5;
    pub const CALIBRATION: u64 = 6;
    pub const PREDICTION: u64 = 7;
}
