//! Confidence-based evaluation: mean maximum confidence, area under the ROC
//! curve with in-distribution points as positives, and the Brier score.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Tolerance on row sums when checking that probabilities lie on the simplex.
pub const SIMPLEX_TOL: f64 = 1e-6;

fn check_simplex(p: &Matrix) -> Result<()> {
    if p.rows() == 0 || p.cols() == 0 {
        return Err(Error::invalid("empty probability matrix"));
    }
    for (i, r) in p.row_iter().enumerate() {
        let s: f64 = r.iter().sum();
        if (s - 1.0).abs() > SIMPLEX_TOL || r.iter().any(|&v| !(v >= -SIMPLEX_TOL)) {
            return Err(Error::invalid(format!("row {i} is not a probability vector (sum {s})")));
        }
    }
    Ok(())
}

/// Largest entry of each row.
pub fn max_confidence(p: &Matrix) -> Vec<f64> {
    p.row_iter().map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect()
}

/// Mean over rows of the largest class probability.
pub fn mmc(p: &Matrix) -> Result<f64> {
    check_simplex(p)?;
    Ok(running_mean(&max_confidence(p)))
}

/// Incremental mean; returns `c` exactly when every entry equals `c`.
fn running_mean(v: &[f64]) -> f64 {
    let mut m = 0.0;
    for (i, &x) in v.iter().enumerate() {
        m += (x - m) / (i + 1) as f64;
    }
    m
}

/// Mann-Whitney estimate of `P(in > out) + P(in = out) / 2`.
///
/// Sorts both samples and counts wins and ties with integer arithmetic, so
/// the only rounding is the final division.
pub fn auroc(in_conf: &[f64], out_conf: &[f64]) -> Result<f64> {
    if in_conf.is_empty() || out_conf.is_empty() {
        return Err(Error::invalid("AUROC needs both samples nonempty"));
    }
    if in_conf.iter().chain(out_conf).any(|v| v.is_nan()) {
        return Err(Error::NonFinite("NaN confidence".into()));
    }
    let mut a = in_conf.to_vec();
    let mut b = out_conf.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    // twice the Mann-Whitney U: 2 per win, 1 per tie
    let mut u2: u128 = 0;
    let (mut lo, mut hi) = (0usize, 0usize);
    for &x in &a {
        while lo < b.len() && b[lo] < x {
            lo += 1;
        }
        hi = hi.max(lo);
        while hi < b.len() && b[hi] <= x {
            hi += 1;
        }
        u2 += 2 * lo as u128 + (hi - lo) as u128;
    }
    Ok(u2 as f64 / (2 * a.len() as u128 * b.len() as u128) as f64)
}

/// Mean over rows of `Σ_c (p_c - 1[y = c])²`.
pub fn brier(p: &Matrix, labels: &[usize]) -> Result<f64> {
    check_simplex(p)?;
    if labels.len() != p.rows() {
        return Err(Error::dims(format!("{} labels for {} rows", labels.len(), p.rows())));
    }
    let mut total = 0.0;
    for (r, &y) in p.row_iter().zip(labels) {
        if y >= p.cols() {
            return Err(Error::invalid(format!("label {y} out of range for {} classes", p.cols())));
        }
        total += r.iter().enumerate().map(|(c, &v)| if c == y { (v - 1.0).powi(2) } else { v * v }).sum::<f64>();
    }
    Ok(total / p.rows() as f64)
}

/// Metrics for one evaluated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetrics {
    pub name: String,
    pub mmc: f64,
    /// Against the in-distribution set; absent for the in-distribution set itself.
    pub auroc: Option<f64>,
    /// Only for labelled sets.
    pub brier: Option<f64>,
    pub confidences: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub datasets: Vec<DatasetMetrics>,
}

impl EvalReport {
    /// Builds a report from the in-distribution predictions and any number of
    /// named out-of-distribution predictions.
    pub fn build(
        in_name: &str,
        in_probs: &Matrix,
        in_labels: Option<&[usize]>,
        outs: &[(String, Matrix)],
    ) -> Result<Self> {
        let in_conf = max_confidence(in_probs);
        let mut datasets = vec![DatasetMetrics {
            name: in_name.to_string(),
            mmc: mmc(in_probs)?,
            auroc: None,
            brier: in_labels.map(|l| brier(in_probs, l)).transpose()?,
            confidences: in_conf.clone(),
        }];
        for (name, p) in outs {
            let conf = max_confidence(p);
            datasets.push(DatasetMetrics {
                name: name.clone(),
                mmc: mmc(p)?,
                auroc: Some(auroc(&in_conf, &conf)?),
                brier: None,
                confidences: conf,
            });
        }
        Ok(Self { datasets })
    }

    pub fn get(&self, name: &str) -> Option<&DatasetMetrics> {
        self.datasets.iter().find(|d| d.name == name)
    }
}
