//! Deterministic seed derivation.
//!
//! Every random stream in the crate is a `ChaCha8Rng` seeded from a 64-bit
//! value. Child seeds are derived from a parent seed and a path of integer
//! labels (experiment, cell, trial, arm, ...) by repeated SplitMix64
//! finalization, so any single cell of a sweep can be re-run in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random stream type used for particles, ensembles and the filter master stream.
pub type Stream = ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `parent` and a label path.
///
/// `derive_seed(s, &[a, b])` equals `derive_seed(derive_seed(s, &[a]), &[b])`.
pub fn derive_seed(parent: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(parent, |acc, &label| splitmix64(acc ^ splitmix64(label)))
}

pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Labels used as the first path element when deriving experiment seeds.
pub mod label {
    pub const BASE_RUN: u64 = 1;
    pub const PF_VS_ENSEMBLE: u64 = 2;
    pub const PARTICLE_SWEEP: u64 = 3;
    pub const WINDOW_SWEEP: u64 = 4;
    pub const CALIBRATE: u64 = 5;
    pub const SYNTHETIC: u64 = 6;

    pub const ARM_NO_FILTER: u64 = 100;
    pub const ARM_FILTER: u64 = 101;
}
