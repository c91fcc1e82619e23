//! Seeded random streams.
//!
//! Every random draw in the crate comes from a `ChaCha20Rng` seeded with the
//! user seed and switched to a fixed stream id, so that e.g. changing the number
//! of solver restarts never perturbs the sampled data.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub const NOISE_VARIANCES: u64 = 1;
pub const MIXING: u64 = 2;
pub const SOLVER: u64 = 3;
pub const FILL: u64 = 4;
pub const PERTURB: u64 = 5;
pub const SUBSAMPLE: u64 = 6;
pub const GRAPH: u64 = 7;
/// Noise column `i` uses stream `NOISE_COLUMN_BASE + i`.
pub const NOISE_COLUMN_BASE: u64 = 1 << 16;

pub fn stream(seed: u64, id: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Mixes a sub-index (round, column, ...) into a seed. SplitMix64 finalizer.
pub fn derive(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
