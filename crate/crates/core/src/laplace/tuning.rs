use serde::{Deserialize, Serialize};

use super::curvature::CurvatureFit;
use super::posterior::build_posterior;
use super::predict::{predict, PredictConfig, Predictive};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::mmc;
use crate::network::Network;
use crate::training::LossKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuningObjective {
    /// Mean predictive log-likelihood on labelled validation data.
    ValLogLikelihood,
    /// Distance of the validation confidences from the ideal
    /// `|1 - MMC_in| + |1/k - MMC_out|`, minimized.
    OodMmc,
}

/// `10^-4, 10^-3.5, ..., 10^4`.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..17).map(|i| 10f64.powf(-4.0 + 0.5 * i as f64)).collect()
}

/// Score for one grid point. Higher is better; `None` marks a candidate
/// whose posterior could not be built or evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub lambda: f64,
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub lambda: f64,
    pub candidates: Vec<Candidate>,
}

/// Index of the highest score, keeping the earliest on ties.
pub fn best_candidate(candidates: &[Candidate]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        if let Some(s) = c.score.filter(|s| !s.is_nan()) {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Mean log predictive density of the targets.
///
/// Classification uses `log p(y | x)`; regression uses a Gaussian with the
/// predictive mean and total variance.
pub fn predictive_log_likelihood(pred: &Predictive, data: &Dataset) -> Result<f64> {
    let m = data.len();
    if m == 0 {
        return Err(Error::invalid("log-likelihood of an empty dataset"));
    }
    let total: f64 = match pred {
        Predictive::Classification(p) => {
            let labels = data.labels().ok_or_else(|| Error::invalid("classification log-likelihood needs labels"))?;
            labels.iter().enumerate().map(|(i, &y)| p[(i, y)].max(f64::MIN_POSITIVE).ln()).sum()
        }
        Predictive::Regression { mean, total, .. } => {
            let y = data.values().ok_or_else(|| Error::invalid("regression log-likelihood needs targets"))?;
            let ln2pi = (2.0 * std::f64::consts::PI).ln();
            y.as_slice()
                .iter()
                .zip(mean.as_slice())
                .zip(total.as_slice())
                .map(|((t, mu), s2)| -0.5 * (ln2pi + s2.ln() + (t - mu).powi(2) / s2))
                .sum()
        }
    };
    Ok(total / m as f64)
}

/// Chooses the prior precision from `grid` by rebuilding the posterior for
/// each candidate. Every candidate is scored with the same prediction seed.
///
/// `ood` is required for [`TuningObjective::OodMmc`]; `classes` is the
/// number of classes used for the `1/k` target.
#[allow(clippy::too_many_arguments)]
pub fn tune_prior_precision(
    net: &Network,
    fit: &CurvatureFit,
    mean: &[f64],
    loss: &LossKind,
    val: &Dataset,
    ood: Option<&Dataset>,
    objective: TuningObjective,
    grid: &[f64],
    cfg: &PredictConfig,
) -> Result<TuningResult> {
    if grid.is_empty() {
        return Err(Error::invalid("empty prior-precision grid"));
    }
    let ood = match objective {
        TuningObjective::OodMmc => {
            if !loss.is_classification() {
                return Err(Error::invalid("the confidence objective needs a classification model"));
            }
            Some(ood.ok_or_else(|| Error::invalid("the confidence objective needs outlier data"))?)
        }
        TuningObjective::ValLogLikelihood => None,
    };
    let mut candidates = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let score = (|| -> Result<f64> {
            let post = build_posterior(fit, mean.to_vec(), lambda)?;
            let pred = predict(net, &post, &val.features, loss, cfg)?;
            let s = match ood {
                None => predictive_log_likelihood(&pred, val)?,
                Some(out) => {
                    let p_in = pred.probabilities().expect("classification");
                    let k = p_in.cols() as f64;
                    let p_out = predict(net, &post, &out.features, loss, cfg)?;
                    let p_out = p_out.probabilities().expect("classification");
                    -((1.0 - mmc(p_in)?).abs() + (1.0 / k - mmc(p_out)?).abs())
                }
            };
            if s.is_finite() {
                Ok(s)
            } else {
                Err(Error::NonFinite(format!("objective {s}")))
            }
        })();
        let score = match score {
            Ok(s) => Some(s),
            Err(e) => {
                log::warn!("prior precision {lambda:e} skipped: {e}");
                None
            }
        };
        log::debug!("prior precision {lambda:e}: score {score:?}");
        candidates.push(Candidate { lambda, score });
    }
    let best = best_candidate(&candidates)
        .ok_or_else(|| Error::NoViableCandidate("no prior precision in the grid produced a usable posterior".into()))?;
    Ok(TuningResult { lambda: candidates[best].lambda, candidates })
}
