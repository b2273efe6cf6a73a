//! Seeded pseudo-random numbers.
//!
//! The generator is xoshiro256** (Blackman & Vigna) from `rand_xoshiro`, with
//! its 256-bit state expanded from a 64-bit seed by SplitMix64. Integer
//! ranges and shuffles use `rand`; normal draws use `rand_distr`'s ziggurat
//! sampler. A given seed yields the same stream on every platform.

use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256StarStar;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    inner: Xoshiro256StarStar,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            inner: Xoshiro256StarStar::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen()
    }

    pub fn uniform_range(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.uniform()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        self.inner.gen_range(0..n)
    }

    /// Standard normal draw.
    pub fn gaussian(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn gaussian_vec(&mut self, n: usize, mean: f64, stddev: f64) -> Vec<f64> {
        assert!(stddev >= 0.0, "negative stddev");
        (0..n).map(|_| mean + stddev * self.gaussian()).collect()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// A seeded permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }
}

/// `n` draws from N(mean, stddev²), advancing `rng`.
pub fn rng_gaussian(rng: &mut Rng, n: usize, mean: f64, stddev: f64) -> Vec<f64> {
    rng.gaussian_vec(n, mean, stddev)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_stream() {
        // xoshiro256** seeded through SplitMix64: first output for seed 0.
        let mut sm = 0u64;
        let mut state = [0u64; 4];
        for s in &mut state {
            sm = sm.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = sm;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            *s = z ^ (z >> 31);
        }
        let expected = state[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        assert_eq!(Rng::new(0).next_u64(), expected);

        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        let first: Vec<u64> = (0..3).map(|_| a.next_u64()).collect();
        assert_eq!(first, (0..3).map(|_| b.next_u64()).collect::<Vec<_>>());
        assert_ne!(first[0], first[1]);
    }

    #[test]
    fn zero_stddev_repeats_mean() {
        let mut rng = Rng::new(1);
        assert_eq!(rng_gaussian(&mut rng, 5, 2.5, 0.0), vec![2.5; 5]);
    }

    #[test]
    fn same_seed_same_draws() {
        let a = rng_gaussian(&mut Rng::new(99), 100, 0.0, 1.0);
        let b = rng_gaussian(&mut Rng::new(99), 100, 0.0, 1.0);
        assert_eq!(a, b);
        let c = rng_gaussian(&mut Rng::new(100), 100, 0.0, 1.0);
        assert_ne!(a, c);
    }

    #[test]
    fn sample_mean_converges() {
        let draws = rng_gaussian(&mut Rng::new(7), 100_000, 0.0, 1.0);
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / draws.len() as f64;
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn below_is_in_range_and_covers() {
        let mut rng = Rng::new(3);
        let mut seen = [0usize; 7];
        for _ in 0..7000 {
            seen[rng.below(7)] += 1;
        }
        assert!(seen.iter().all(|&c| c > 800));
    }

    #[test]
    fn permutation_is_a_permutation() {
        let mut p = Rng::new(5).permutation(50);
        p.sort_unstable();
        assert_eq!(p, (0..50).collect::<Vec<_>>());
    }
}
