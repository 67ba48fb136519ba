use serde::{Deserialize, Serialize};

use super::{Dataset, Role};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

/// Ways of turning inliers into uninformative outliers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OodKind {
    /// Random permutation of each row's coordinates.
    Permute,
    /// Repeated box filter along the feature vector.
    Blur,
    /// Shrink each row towards its mean.
    Contrast,
}

/// Numeric knobs for [`synthesize_ood_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OodParams {
    /// Odd box-filter width.
    pub blur_width: usize,
    pub blur_passes: usize,
    /// Contrast factor `c` is drawn uniformly from `[contrast_low, contrast_high]`.
    pub contrast_low: f64,
    pub contrast_high: f64,
}

impl Default for OodParams {
    fn default() -> Self {
        Self { blur_width: 3, blur_passes: 2, contrast_low: 0.05, contrast_high: 0.3 }
    }
}

pub fn synthesize_ood(in_data: &Dataset, kind: OodKind, rng: &mut Rng) -> Result<Dataset> {
    synthesize_ood_with(in_data, kind, &OodParams::default(), rng)
}

pub fn synthesize_ood_with(in_data: &Dataset, kind: OodKind, params: &OodParams, rng: &mut Rng) -> Result<Dataset> {
    if in_data.is_empty() {
        return Err(Error::invalid("cannot synthesize outliers from an empty dataset"));
    }
    let n = in_data.n_features();
    let mut out = Matrix::zeros(in_data.len(), n);
    match kind {
        OodKind::Permute => {
            for (i, row) in in_data.features.row_iter().enumerate() {
                let p = rng.permutation(n);
                for (dst, &src) in out.row_mut(i).iter_mut().zip(&p) {
                    *dst = row[src];
                }
            }
        }
        OodKind::Blur => {
            if n < params.blur_width || params.blur_width.is_multiple_of(2) {
                return Err(Error::invalid(format!(
                    "blur needs an odd width no larger than the feature count (width {}, {n} features)",
                    params.blur_width
                )));
            }
            for (i, row) in in_data.features.row_iter().enumerate() {
                let mut cur = row.to_vec();
                for _ in 0..params.blur_passes {
                    cur = box_filter(&cur, params.blur_width);
                }
                out.row_mut(i).copy_from_slice(&cur);
            }
        }
        OodKind::Contrast => {
            for (i, row) in in_data.features.row_iter().enumerate() {
                let c = if params.contrast_low == params.contrast_high {
                    params.contrast_low
                } else {
                    rng.uniform(params.contrast_low, params.contrast_high)
                };
                let mean = row.iter().sum::<f64>() / n as f64;
                for (dst, &v) in out.row_mut(i).iter_mut().zip(row) {
                    *dst = c * (v - mean) + mean;
                }
            }
        }
    }
    Ok(Dataset::unlabeled(out, Role::Out))
}

/// One outlier set per kind, stacked in the given order.
pub fn synthesize_ood_set(in_data: &Dataset, kinds: &[OodKind], rng: &mut Rng) -> Result<Dataset> {
    let mut features = Matrix::zeros(0, in_data.n_features());
    for &k in kinds {
        features = features.vstack(&synthesize_ood(in_data, k, rng)?.features)?;
    }
    Ok(Dataset::unlabeled(features, Role::Out))
}

/// Moving average with edge values replicated.
fn box_filter(x: &[f64], width: usize) -> Vec<f64> {
    let r = (width / 2) as isize;
    let last = x.len() as isize - 1;
    (0..x.len() as isize)
        .map(|i| (-r..=r).map(|o| x[(i + o).clamp(0, last) as usize]).sum::<f64>() / width as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Targets;

    fn sample() -> Dataset {
        let x = Matrix::from_rows(&[[1.0, 5.0, -2.0, 0.5], [3.0, 3.0, 9.0, -1.0]]).unwrap();
        Dataset::new(x, Targets::Labels { labels: vec![0, 1], classes: 2 }, Role::Train).unwrap()
    }

    #[test]
    fn permute_keeps_row_multisets() {
        let d = sample();
        let o = synthesize_ood(&d, OodKind::Permute, &mut Rng::new(1)).unwrap();
        for (a, b) in d.features.row_iter().zip(o.features.row_iter()) {
            let mut a = a.to_vec();
            let mut b = b.to_vec();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            assert_eq!(a, b);
        }
        assert_eq!(o.role, Role::Out);
    }

    #[test]
    fn unit_contrast_is_identity() {
        let d = sample();
        let p = OodParams { contrast_low: 1.0, contrast_high: 1.0, ..OodParams::default() };
        let o = synthesize_ood_with(&d, OodKind::Contrast, &p, &mut Rng::new(0)).unwrap();
        for (a, b) in d.features.as_slice().iter().zip(o.features.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn contrast_shrinks_spread() {
        let d = sample();
        let o = synthesize_ood(&d, OodKind::Contrast, &mut Rng::new(0)).unwrap();
        for (a, b) in d.features.row_iter().zip(o.features.row_iter()) {
            let spread = |r: &[f64]| r.iter().cloned().fold(f64::MIN, f64::max) - r.iter().cloned().fold(f64::MAX, f64::min);
            assert!(spread(b) <= 0.3 * spread(a) + 1e-12);
        }
    }

    #[test]
    fn blur_preserves_constants() {
        let x = Matrix::from_rows(&[[0.7; 6], [-3.25; 6]]).unwrap();
        let d = Dataset::unlabeled(x.clone(), Role::In);
        let o = synthesize_ood(&d, OodKind::Blur, &mut Rng::new(0)).unwrap();
        for (a, b) in x.as_slice().iter().zip(o.features.as_slice()) {
            assert!((a - b).abs() <= 1e-15 * a.abs());
        }
    }

    #[test]
    fn blur_needs_three_features() {
        let d = Dataset::unlabeled(Matrix::zeros(2, 2), Role::In);
        assert!(synthesize_ood(&d, OodKind::Blur, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn outputs_keep_shape_and_are_finite() {
        let d = sample();
        for kind in [OodKind::Permute, OodKind::Blur, OodKind::Contrast] {
            let o = synthesize_ood(&d, kind, &mut Rng::new(4)).unwrap();
            assert_eq!(o.features.shape(), d.features.shape());
            assert!(o.features.is_finite());
        }
        let all = synthesize_ood_set(&d, &[OodKind::Permute, OodKind::Blur], &mut Rng::new(4)).unwrap();
        assert_eq!(all.len(), 4);
    }
}
