//! Deterministic low-discrepancy sampling.
//!
//! Points come from a Halton sequence whose radical-inverse digits are passed
//! through seeded random permutations (one permutation per dimension and digit
//! position). The permutation breaks the strong correlation between the
//! higher prime bases while keeping the stratification of the plain sequence.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const PRIMES: [u32; 32] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
    97, 101, 103, 107, 109, 113, 127, 131,
];

/// Number of digit positions carrying a permutation. Digits beyond this are
/// below f64 resolution for every supported base.
const DIGITS: usize = 54;

/// Scrambled Halton sequence in the unit hypercube `[0, 1)^dim`.
#[derive(Clone, Debug)]
pub struct ScrambledHalton {
    dim: usize,
    perms: Vec<Vec<Vec<u32>>>,
}

impl ScrambledHalton {
    /// # Panics
    ///
    /// Panics when `dim` exceeds the 32 supported dimensions.
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim <= PRIMES.len(), "at most {} dimensions", PRIMES.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let perms = PRIMES[..dim]
            .iter()
            .map(|&b| {
                (0..DIGITS)
                    .map(|_| {
                        let mut p: Vec<u32> = (0..b).collect();
                        p.shuffle(&mut rng);
                        p
                    })
                    .collect()
            })
            .collect();
        Self { dim, perms }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The `index`-th point. Index 0 is a valid point (not the origin, unlike
    /// the unscrambled sequence).
    pub fn point(&self, index: u64) -> Vec<f64> {
        (0..self.dim).map(|j| self.coordinate(index, j)).collect()
    }

    fn coordinate(&self, index: u64, j: usize) -> f64 {
        let base = PRIMES[j] as u64;
        let inv = 1.0 / base as f64;
        let mut scale = inv;
        let mut value = 0.0;
        let mut k = index;
        for perm in &self.perms[j] {
            let digit = (k % base) as usize;
            value += perm[digit] as f64 * scale;
            k /= base;
            scale *= inv;
            if scale < f64::EPSILON * 1e-3 {
                break;
            }
        }
        value.min(1.0 - f64::EPSILON)
    }

    /// First `count` points mapped affinely onto `[-half_width, half_width]^dim`.
    pub fn symmetric_box(&self, count: usize, half_width: f64) -> Vec<Vec<f64>> {
        (0..count as u64)
            .map(|i| {
                self.point(i)
                    .into_iter()
                    .map(|v| (2.0 * v - 1.0) * half_width)
                    .collect()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_lie_in_unit_cube_and_are_reproducible() {
        let a = ScrambledHalton::new(5, 11);
        let b = ScrambledHalton::new(5, 11);
        for i in 0..500 {
            let p = a.point(i);
            assert_eq!(p, b.point(i));
            assert!(p.iter().all(|v| (0.0..1.0).contains(v)));
        }
    }

    #[test]
    fn different_seeds_differ() {
        let a = ScrambledHalton::new(3, 1).point(7);
        let b = ScrambledHalton::new(3, 2).point(7);
        assert_ne!(a, b);
    }

    #[test]
    fn first_dimension_is_stratified() {
        // Each of the 2^k base-2 strata receives exactly one of the first 2^k points.
        let h = ScrambledHalton::new(2, 5);
        let n = 64;
        let mut hits = vec![0; n];
        for i in 0..n as u64 {
            hits[(h.point(i)[0] * n as f64) as usize] += 1;
        }
        assert!(hits.iter().all(|&c| c == 1));
    }

    #[test]
    fn mean_is_close_to_half() {
        let h = ScrambledHalton::new(4, 3);
        let pts: Vec<_> = (0..1024).map(|i| h.point(i)).collect();
        for j in 0..4 {
            let mean = pts.iter().map(|p| p[j]).sum::<f64>() / pts.len() as f64;
            assert!((mean - 0.5).abs() < 5e-3, "dim {j}: {mean}");
        }
    }
}
