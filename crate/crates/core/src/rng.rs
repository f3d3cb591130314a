//! Seeding rules. Every random draw comes from ChaCha8 streams seeded through
//! SplitMix64, so runs are reproducible across platforms.
//!
//! Episode `i` of a batch with master seed `m` uses the seed
//! `splitmix64(m + (i + 1) · 0x9E3779B97F4A7C15)` (wrapping arithmetic), i.e.
//! the `i`-th output of a SplitMix64 generator started at `m`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn episode_seed(master: u64, index: u64) -> u64 {
    splitmix64(master.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

pub fn episode_rng(master: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(episode_seed(master, index))
}

/// Inverse-CDF draw from `probs`. Rounding slack falls on the last state with
/// positive mass.
pub fn sample_categorical<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// Draw from a sparse row of `(state, probability)` pairs.
pub fn sample_transition<R: Rng + ?Sized>(rng: &mut R, row: &[(usize, f64)]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(j, p) in row {
        acc += p;
        if u < acc {
            return j;
        }
    }
    row.iter().rev().find(|(_, p)| *p > 0.0).map_or(0, |(j, _)| *j)
}
