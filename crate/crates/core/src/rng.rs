//! Per-chain random streams.
//!
//! Every chain owns one ChaCha8 stream seeded from
//! `chain_seed(config_seed, point, chain)`, so results never depend on the
//! number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type ChainRng = ChaCha8Rng;

/// SplitMix64 finaliser.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `splitmix64(splitmix64(splitmix64(seed) ^ point) ^ chain)`.
pub fn chain_seed(seed: u64, point: u64, chain: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ point) ^ chain)
}

pub fn chain_rng(seed: u64, point: u64, chain: u64) -> ChainRng {
    ChainRng::seed_from_u64(chain_seed(seed, point, chain))
}
