//! Deterministic random-number streams.
//!
//! Every stochastic component owns a `ChaCha8Rng` derived from a user seed
//! and a fixed stream id, so runs are reproducible and independent workers
//! never share state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SmcRng = ChaCha8Rng;

pub mod streams {
    pub const SIMULATION: u64 = 1;
    pub const INIT: u64 = 2;
    pub const STATE_FILTER: u64 = 3;
    pub const PARAM_FILTER: u64 = 4;
    pub const BASELINE: u64 = 5;
    pub const BOOTSTRAP: u64 = 6;
}

pub fn stream(seed: u64, stream: u64) -> SmcRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seed of the `index`-th run in a campaign rooted at `base`.
pub fn run_seed(base: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
