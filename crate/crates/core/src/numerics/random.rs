use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::linalg::lower_matvec;
use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Seeded random stream.
///
/// Backed by ChaCha8 (a counter-based generator) so identical seeds give
/// identical streams on every platform. Normal draws use `rand_distr`'s
/// ziggurat sampler, which is also platform independent.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream for parallel or per-item work.
    ///
    /// The child seed mixes the parent seed with `stream` through SplitMix64,
    /// so it does not depend on how much of the parent stream was consumed.
    pub fn derive(&self, stream: u64) -> Self {
        Self::new(splitmix64(self.seed ^ splitmix64(stream.wrapping_add(0x9E37_79B9_7F4A_7C15))))
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    /// Uniform on `[low, high)`.
    pub fn uniform(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.inner.gen::<f64>()
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.inner.gen_range(0..=i);
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws `count` samples `mean + chol_cov * z` with `z ~ N(0, I)`.
pub fn sample_gaussian(mean: &[f64], chol_cov: &Matrix, rng: &mut Rng, count: usize) -> Result<Vec<Vec<f64>>> {
    if !chol_cov.is_square() || chol_cov.rows() != mean.len() {
        return Err(Error::dims(format!(
            "mean of length {} with {}x{} Cholesky factor",
            mean.len(),
            chol_cov.rows(),
            chol_cov.cols()
        )));
    }
    Ok((0..count)
        .map(|_| {
            let z = rng.normal_vec(mean.len());
            let mut s = lower_matvec(chol_cov, &z);
            for (si, &m) in s.iter_mut().zip(mean) {
                *si += m;
            }
            s
        })
        .collect())
}
