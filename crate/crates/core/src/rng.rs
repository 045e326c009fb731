//! The engine's one seeded generator.
//!
//! Every random choice (evaluation order, calibration split, bootstrap
//! resampling, synthetic runs) goes through ChaCha20 seeded with
//! `ChaCha20Rng::seed_from_u64`. Bounded integers are drawn by rejection
//! on raw 64-bit output so the sequence does not depend on how a given
//! `rand` release maps words to ranges.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub type EngineRng = ChaCha20Rng;

pub fn seeded(seed: u64) -> EngineRng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Generator for an independent sub-stream, e.g. one bootstrap replicate.
///
/// The stream is a pure function of `(seed, stream)`, so work items can be
/// processed in any order or in parallel and still see the same numbers.
pub fn stream(seed: u64, stream: u64) -> EngineRng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform integer in `[0, bound)`. `bound` must be positive.
pub fn below(rng: &mut EngineRng, bound: u64) -> u64 {
    assert!(bound > 0, "bound must be positive");
    // 2^64 - threshold is a multiple of `bound`; drawing above it is unbiased
    let threshold = bound.wrapping_neg() % bound;
    loop {
        let x = rng.next_u64();
        if x >= threshold {
            return x % bound;
        }
    }
}

/// Uniform real in `[0, 1)` with 53 random bits.
pub fn unit(rng: &mut EngineRng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// In-place Fisher–Yates shuffle, last position first.
pub fn shuffle<T>(rng: &mut EngineRng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = below(rng, i as u64 + 1) as usize;
        items.swap(i, j);
    }
}
