use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

/// Columns whose standard deviation falls below this are left unscaled.
pub const STD_FLOOR: f64 = 1e-12;

/// Per-column affine map `x -> (x - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    /// Population standard deviation, clamped to 1 for constant columns.
    pub std: Vec<f64>,
}

impl Standardization {
    pub fn fit(x: &Matrix) -> Result<Self> {
        if x.rows() == 0 {
            return Err(Error::invalid("cannot standardize an empty matrix"));
        }
        let m = x.rows() as f64;
        let mut mean = vec![0.0; x.cols()];
        for r in x.row_iter() {
            for (mu, &v) in mean.iter_mut().zip(r) {
                *mu += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        let mut var = vec![0.0; x.cols()];
        for r in x.row_iter() {
            for ((s, &v), &mu) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - mu) * (v - mu);
            }
        }
        let std = var
            .into_iter()
            .enumerate()
            .map(|(j, s)| {
                let sd = (s / m).sqrt();
                if sd < STD_FLOOR {
                    log::warn!("feature {j} has zero variance; leaving it unscaled");
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        self.check(x)?;
        Ok(Matrix::from_fn(x.rows(), x.cols(), |i, j| (x[(i, j)] - self.mean[j]) / self.std[j]))
    }

    pub fn invert(&self, z: &Matrix) -> Result<Matrix> {
        self.check(z)?;
        Ok(Matrix::from_fn(z.rows(), z.cols(), |i, j| z[(i, j)] * self.std[j] + self.mean[j]))
    }

    fn check(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.mean.len() {
            return Err(Error::dims(format!("{} columns for statistics of {} features", x.cols(), self.mean.len())));
        }
        Ok(())
    }
}

/// Standardizes `train` with its own statistics and every dataset in `others`
/// with the same (training) statistics.
pub fn standardize(train: &Dataset, others: &[Dataset]) -> Result<(Dataset, Vec<Dataset>, Standardization)> {
    let stats = Standardization::fit(&train.features)?;
    let transform = |d: &Dataset| -> Result<Dataset> {
        let mut out = d.clone();
        out.features = stats.apply(&d.features)?;
        out.stats = Some(stats.clone());
        Ok(out)
    };
    let t = transform(train)?;
    let rest = others.iter().map(transform).collect::<Result<Vec<_>>>()?;
    Ok((t, rest, stats))
}

/// Fractions for a seeded train/validation/test split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train: 0.6, val: 0.2, test: 0.2, seed: 0 }
    }
}

impl SplitSpec {
    fn validate(&self) -> Result<()> {
        let f = [self.train, self.val, self.test];
        if f.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("split fractions {f:?} must be non-negative and sum to 1")));
        }
        Ok(())
    }
}

/// Shuffles rows with the split seed and cuts them into three disjoint parts.
///
/// Train and validation sizes are `round(m * fraction)`; the test part takes
/// whatever remains.
pub fn split(data: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    spec.validate()?;
    let m = data.len();
    let order = Rng::new(spec.seed).permutation(m);
    let n_train = ((m as f64 * spec.train).round() as usize).min(m);
    let n_val = ((m as f64 * spec.val).round() as usize).min(m - n_train);
    let (a, rest) = order.split_at(n_train);
    let (b, c) = rest.split_at(n_val);
    use super::Role;
    Ok((data.select(a).with_role(Role::Train), data.select(b).with_role(Role::Val), data.select(c).with_role(Role::Test)))
}
