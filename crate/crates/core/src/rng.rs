//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream. A run is
//! reproduced exactly by its seed; independent sub-runs (simulation episodes,
//! sweep cells) take numbered substreams of the same seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub fn stream(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Substream `index` of `seed`; distinct indices never overlap.
pub fn substream(seed: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Inverse-CDF draw from a discrete distribution with one uniform variate.
///
/// Zero-probability outcomes are never returned, even when rounding leaves
/// the cumulative sum short of the variate.
pub fn sample_index<R: rand::Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}
