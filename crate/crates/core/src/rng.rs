//! Seeded randomness shared by sampling plans, probe training and the
//! workflow.
//!
//! Generator: ChaCha with 8 rounds, seeded from a `u64` through
//! `SeedableRng::seed_from_u64` (PCG32 key expansion). Integers below `n` are
//! drawn with Lemire's multiply-and-reject method on `next_u64`, and samples
//! without replacement use a partial Fisher-Yates shuffle. None of these
//! steps depend on platform or pointer width, so a plan can be recomputed
//! from its recorded seed anywhere.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Recorded in sampling plans and session files.
pub const GENERATOR_ID: &str = "chacha8-lemire-fisher-yates-v1";

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent sub-seed from a root seed and a path of indices,
/// e.g. `(seed, [round, member])`.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Uniform integer in `0..n`. `n` must be nonzero.
pub fn uniform_below<R: RngCore>(rng: &mut R, n: u64) -> u64 {
    debug_assert!(n > 0);
    let threshold = n.wrapping_neg() % n;
    loop {
        let m = (rng.next_u64() as u128) * (n as u128);
        if (m as u64) >= threshold {
            return (m >> 64) as u64;
        }
    }
}

/// `min(k, n)` distinct indices from `0..n`, in draw order.
pub fn sample_indices<R: RngCore>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    let k = k.min(n);
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + uniform_below(rng, (n - i) as u64) as usize;
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

pub fn shuffle<T, R: RngCore>(rng: &mut R, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = uniform_below(rng, (i + 1) as u64) as usize;
        items.swap(i, j);
    }
}

/// Uniform float in `[0, 1)` with 53 bits of precision.
pub fn unit_f64<R: RngCore>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn sample_is_distinct_and_reproducible() {
        let a = sample_indices(&mut seeded(7), 1000, 500);
        let b = sample_indices(&mut seeded(7), 1000, 500);
        assert_eq!(a, b);
        assert_eq!(a.iter().collect::<HashSet<_>>().len(), 500);
        assert!(a.iter().all(|&i| i < 1000));
        assert_ne!(a, sample_indices(&mut seeded(8), 1000, 500));
    }

    #[test]
    fn sample_exhausts_small_population() {
        let mut s = sample_indices(&mut seeded(1), 20, 500);
        s.sort_unstable();
        assert_eq!(s, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn derived_seeds_differ() {
        let seeds: HashSet<u64> = (0..4)
            .flat_map(|r| (0..4).map(move |m| derive_seed(42, &[r, m])))
            .collect();
        assert_eq!(seeds.len(), 16);
        assert_eq!(derive_seed(42, &[1, 2]), derive_seed(42, &[1, 2]));
    }

    #[test]
    fn uniform_below_is_roughly_uniform() {
        let mut rng = seeded(3);
        let mut counts = [0u32; 6];
        for _ in 0..60_000 {
            counts[uniform_below(&mut rng, 6) as usize] += 1;
        }
        for c in counts {
            assert!((9_500..10_500).contains(&c), "{counts:?}");
        }
    }
}
