use std::f64::consts::PI;

use super::{Dataset, Role, Targets};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

/// Two interleaving half circles of unit radius.
///
/// Class 0 lies on `(cos t, sin t)` and class 1 on `(1 - cos t, 0.5 - sin t)`
/// for `t` evenly spaced in `[0, π]`; Gaussian noise with `noise_std` is then
/// added to both coordinates and the rows are shuffled. Class sizes differ by
/// at most one.
pub fn gen_two_moons(m: usize, noise_std: f64, seed: u64) -> Result<Dataset> {
    if m < 2 {
        return Err(Error::invalid("two moons needs at least two points"));
    }
    let mut rng = Rng::new(seed);
    let n_outer = m.div_ceil(2);
    let n_inner = m - n_outer;
    let mut rows = Vec::with_capacity(m);
    let mut labels = Vec::with_capacity(m);
    let angle = |i: usize, n: usize| if n <= 1 { 0.0 } else { PI * i as f64 / (n - 1) as f64 };
    for i in 0..n_outer {
        let t = angle(i, n_outer);
        rows.push([t.cos(), t.sin()]);
        labels.push(0);
    }
    for i in 0..n_inner {
        let t = angle(i, n_inner);
        rows.push([1.0 - t.cos(), 0.5 - t.sin()]);
        labels.push(1);
    }
    let order = rng.permutation(m);
    let mut data = Vec::with_capacity(2 * m);
    let mut y = Vec::with_capacity(m);
    for &i in &order {
        let [a, b] = rows[i];
        data.push(a + noise_std * rng.normal());
        data.push(b + noise_std * rng.normal());
        y.push(labels[i]);
    }
    Dataset::new(Matrix::from_vec(m, 2, data)?, Targets::Labels { labels: y, classes: 2 }, Role::Train)
}

/// Fraction of `x_range` (measured from each end) where no points are drawn.
const REGRESSION_MARGIN: f64 = 0.1;
/// Fraction of `x_range` covered by each cluster.
const REGRESSION_CLUSTER: f64 = 0.3;

/// 1-D regression toy: `y = sin(2x) + ε`.
///
/// Inputs alternate between two uniform clusters,
/// `[lo + 0.1w, lo + 0.4w]` and `[hi - 0.4w, hi - 0.1w]` with `w = hi - lo`,
/// leaving a gap in the middle and empty margins at both ends.
pub fn gen_toy_regression(m: usize, x_range: (f64, f64), noise_std: f64, seed: u64) -> Result<Dataset> {
    let (lo, hi) = x_range;
    if m < 2 {
        return Err(Error::invalid("toy regression needs at least two points"));
    }
    if !(lo < hi) {
        return Err(Error::invalid(format!("empty x range ({lo}, {hi})")));
    }
    let w = hi - lo;
    let mut rng = Rng::new(seed);
    let mut xs = Vec::with_capacity(m);
    let mut ys = Vec::with_capacity(m);
    for i in 0..m {
        let start = if i % 2 == 0 {
            lo + REGRESSION_MARGIN * w
        } else {
            hi - (REGRESSION_MARGIN + REGRESSION_CLUSTER) * w
        };
        let x = rng.uniform(start, start + REGRESSION_CLUSTER * w);
        xs.push(x);
        ys.push((2.0 * x).sin() + noise_std * rng.normal());
    }
    Dataset::new(Matrix::column(&xs), Targets::Values(Matrix::column(&ys)), Role::Train)
}

/// `m x n` entries uniform on `[low, high]`, multiplied by `scale`.
///
/// `scale = 1` gives plain noise; a large scale (e.g. 5000) probes the
/// far-from-data regime.
pub fn gen_uniform_noise(m: usize, n: usize, low: f64, high: f64, seed: u64, scale: f64) -> Result<Dataset> {
    if !(low < high) {
        return Err(Error::invalid(format!("uniform noise needs low < high, got [{low}, {high}]")));
    }
    let mut rng = Rng::new(seed);
    let x = Matrix::from_fn(m, n, |_, _| scale * rng.uniform(low, high));
    Ok(Dataset::unlabeled(x, Role::Out))
}

/// Points with norm uniform in `[r_min, r_max]` and uniformly random direction.
pub fn ring_points(m: usize, n: usize, r_min: f64, r_max: f64, seed: u64) -> Result<Dataset> {
    if !(0.0 <= r_min && r_min <= r_max) || n == 0 {
        return Err(Error::invalid(format!("bad ring [{r_min}, {r_max}] in {n} dimensions")));
    }
    let mut rng = Rng::new(seed);
    let mut data = Vec::with_capacity(m * n);
    for _ in 0..m {
        let mut dir = rng.normal_vec(n);
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        let r = rng.uniform(r_min, r_max);
        dir.iter_mut().for_each(|v| *v *= r / norm);
        data.extend(dir);
    }
    Ok(Dataset::unlabeled(Matrix::from_vec(m, n, data)?, Role::Out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_moons_lie_on_half_circles() {
        let d = gen_two_moons(101, 0.0, 3).unwrap();
        for (row, &y) in d.features.row_iter().zip(d.labels().unwrap()) {
            let (a, b) = (row[0], row[1]);
            if y == 0 {
                assert!((a * a + b * b - 1.0).abs() < 1e-12 && b >= -1e-12);
            } else {
                assert!(((a - 1.0).powi(2) + (b - 0.5).powi(2) - 1.0).abs() < 1e-12 && b <= 0.5 + 1e-12);
            }
        }
    }

    #[test]
    fn moons_are_balanced_and_deterministic() {
        let d = gen_two_moons(1000, 0.1, 9).unwrap();
        let ones = d.labels().unwrap().iter().filter(|&&y| y == 1).count();
        assert_eq!(ones, 500);
        assert_eq!(d, gen_two_moons(1000, 0.1, 9).unwrap());
        let odd = gen_two_moons(7, 0.1, 9).unwrap();
        let ones = odd.labels().unwrap().iter().filter(|&&y| y == 1).count();
        assert!(ones == 3 || ones == 4);
    }

    #[test]
    fn toy_regression_contracts() {
        let d = gen_toy_regression(200, (-4.0, 4.0), 0.0, 1).unwrap();
        let y = d.values().unwrap();
        for (i, row) in d.features.row_iter().enumerate() {
            assert!(row[0] >= -4.0 && row[0] <= 4.0);
            assert_eq!(y[(i, 0)], (2.0 * row[0]).sin());
            // nothing in the middle gap
            assert!(row[0].abs() >= 0.8 - 1e-12);
        }
        assert_eq!(gen_toy_regression(50, (0.0, 1.0), 0.1, 5).unwrap(), gen_toy_regression(50, (0.0, 1.0), 0.1, 5).unwrap());
    }

    #[test]
    fn uniform_noise_ranges() {
        let d = gen_uniform_noise(100, 4, 0.0, 1.0, 2, 5000.0).unwrap();
        assert!(d.features.as_slice().iter().all(|&v| (0.0..=5000.0).contains(&v)));
        let d = gen_uniform_noise(100, 4, -10.0, 10.0, 2, 1.0).unwrap();
        assert!(d.features.as_slice().iter().all(|&v| (-10.0..=10.0).contains(&v)));
        assert_eq!(d, gen_uniform_noise(100, 4, -10.0, 10.0, 2, 1.0).unwrap());
        assert!(gen_uniform_noise(1, 1, 1.0, 1.0, 0, 1.0).is_err());
    }

    #[test]
    fn ring_norms() {
        let d = ring_points(200, 2, 8.0, 12.0, 0).unwrap();
        for r in d.features.row_iter() {
            let n = (r[0] * r[0] + r[1] * r[1]).sqrt();
            assert!((8.0 - 1e-9..=12.0 + 1e-9).contains(&n));
        }
    }
}
