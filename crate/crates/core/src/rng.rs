//! Seeded randomness.
//!
//! Every random draw in the crate comes from ChaCha8 (`rand_chacha::ChaCha8Rng`),
//! a counter-based generator whose output stream is fixed by its 64-bit seed
//! and stream id on every platform. Independent consumers within one run
//! (data, initialisation, optimizer) use distinct stream ids of the same seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type RunRng = ChaCha8Rng;

/// Algorithm name recorded in run summaries.
pub const RNG_ALGORITHM: &str = "ChaCha8";

pub mod streams {
    pub const DATA: u64 = 1;
    pub const INIT: u64 = 2;
    pub const OPTIMIZER: u64 = 3;
    pub const TEACHER: u64 = 4;
    pub const SHUFFLE: u64 = 5;
}

pub fn seeded(seed: u64, stream: u64) -> RunRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
