//! Seeded random streams.
//!
//! Each run draws from several independent ChaCha8 streams keyed by
//! `(seed, run id, purpose)` so that, e.g., switching CSI estimation on does
//! not perturb the true channel or arrival sequences.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    LineOfSight = 1,
    Channel = 2,
    Estimate = 3,
    Arrivals = 4,
}

/// Seed of run `run` within a sweep rooted at `seed` (run 0 keeps `seed`).
pub fn run_seed(seed: u64, run: u64) -> u64 {
    if run == 0 {
        return seed;
    }
    // splitmix64 finalizer
    let mut z = seed.wrapping_add(run.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}
