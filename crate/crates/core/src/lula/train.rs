use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::augment::{augment, penultimate_counts, InitStd, LulaAugmentation};
use super::objective::{analytic_gradient, last_layer_posterior, objective_at, ObjectiveData, VarianceConfig, VarianceEvaluator};
use crate::error::{Error, Result};
use crate::laplace::{predict, CurvatureKind, LaplacePosterior, PredictConfig};
use crate::metrics::mmc;
use crate::network::Network;
use crate::numerics::{Matrix, Rng};
use crate::training::{LossKind, Optimizer, OptimizerState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMethod {
    /// Central differences over the free parameters.
    FiniteDifference,
    /// Closed form; diagonal posterior with linearized variances only.
    Analytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LulaTrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Monte Carlo draws for `ν` when `variance` is `mc`.
    pub samples: usize,
    pub variance: VarianceEvaluator,
    pub gradient: GradientMethod,
    /// Posterior used inside the objective.
    pub curvature: CurvatureKind,
    /// Inlier rows per step; `None` uses the whole set.
    pub in_batch: Option<usize>,
    pub out_batch: Option<usize>,
    /// Relative step for finite differences, scaled by `max(1, |θ|)`.
    pub fd_step: f64,
    pub seed: u64,
}

impl Default for LulaTrainConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::default(),
            learning_rate: 1e-2,
            epochs: 20,
            samples: 100,
            variance: VarianceEvaluator::Linearized,
            gradient: GradientMethod::Analytic,
            curvature: CurvatureKind::DiagGgn,
            in_batch: None,
            out_batch: None,
            fd_step: 1e-4,
            seed: 0,
        }
    }
}

impl LulaTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.samples == 0 {
            return Err(Error::invalid("sample count must be at least 1"));
        }
        if self.in_batch == Some(0) || self.out_batch == Some(0) {
            return Err(Error::invalid("batch sizes must be positive"));
        }
        if !(self.fd_step > 0.0) {
            return Err(Error::invalid("finite-difference step must be positive"));
        }
        if self.gradient == GradientMethod::Analytic
            && (self.curvature != CurvatureKind::DiagGgn || self.variance != VarianceEvaluator::Linearized)
        {
            return Err(Error::invalid(
                "the analytic gradient needs curvature = diag_ggn and variance = linearized; use finite_difference otherwise",
            ));
        }
        Ok(())
    }

    fn variance_config(&self, seed: u64) -> VarianceConfig {
        VarianceConfig { evaluator: self.variance, samples: self.samples, seed }
    }
}

/// Inputs to LULA training: the posterior is fitted on `fit`, the objective
/// contrasts `inliers` with `outliers`.
#[derive(Debug, Clone, Copy)]
pub struct LulaData<'a> {
    pub fit: &'a Matrix,
    pub inliers: &'a Matrix,
    pub outliers: &'a Matrix,
}

impl<'a> LulaData<'a> {
    /// Uses the inliers for the posterior fit as well.
    pub fn new(inliers: &'a Matrix, outliers: &'a Matrix) -> Self {
        Self { fit: inliers, inliers, outliers }
    }
}

#[derive(Debug, Clone)]
pub struct LulaOutcome {
    pub net: Network,
    /// Objective before each update.
    pub history: Vec<f64>,
    /// Posterior refitted after the last update, of the training kind.
    pub posterior: LaplacePosterior,
}

fn free_values(net: &Network, idx: &[usize]) -> Vec<f64> {
    let flat = net.to_flat();
    idx.iter().map(|&i| flat[i]).collect()
}

fn with_free(net: &Network, idx: &[usize], values: &[f64]) -> Result<Network> {
    let mut flat = net.to_flat();
    for (&i, &v) in idx.iter().zip(values) {
        flat[i] = v;
    }
    let mut out = net.clone();
    out.set_flat(&flat)?;
    Ok(out)
}

/// Central-difference gradient of the objective over the free entries.
#[allow(clippy::too_many_arguments)]
pub fn finite_difference_gradient(
    net: &Network,
    aug: &LulaAugmentation,
    data: ObjectiveData<'_>,
    loss: &LossKind,
    lambda: f64,
    kind: CurvatureKind,
    variance: &VarianceConfig,
    rel_step: f64,
) -> Result<Vec<f64>> {
    let idx = aug.free_indices();
    let base = free_values(net, &idx);
    (0..idx.len())
        .into_par_iter()
        .map(|c| {
            let h = rel_step * base[c].abs().max(1.0);
            let eval = |delta: f64| -> Result<f64> {
                let mut v = base.clone();
                v[c] += delta;
                Ok(objective_at(&with_free(net, &idx, &v)?, data, loss, kind, lambda, variance)?.0)
            };
            Ok((eval(h)? - eval(-h)?) / (2.0 * h))
        })
        .collect()
}

fn batch(x: &Matrix, size: Option<usize>, step: usize, order: &[usize]) -> Matrix {
    match size {
        Some(b) if b < x.rows() => {
            let m = x.rows();
            let idx: Vec<usize> = (0..b).map(|i| order[(step * b + i) % m]).collect();
            x.select_rows(&idx)
        }
        _ => x.clone(),
    }
}

/// Trains the free blocks of an augmented network to lower the output
/// variance on inliers and raise it on outliers.
///
/// Every step refits the last-layer posterior at the current parameters,
/// evaluates the objective, and updates the free entries only. All other
/// entries, and therefore the network's outputs, stay bitwise identical.
/// With full batches (the default) there is one step per epoch.
pub fn train_lula(
    net: &Network,
    aug: &LulaAugmentation,
    data: LulaData<'_>,
    loss: &LossKind,
    lambda: f64,
    cfg: &LulaTrainConfig,
) -> Result<LulaOutcome> {
    cfg.validate()?;
    if data.inliers.rows() == 0 || data.outliers.rows() == 0 || data.fit.rows() == 0 {
        return Err(Error::invalid("LULA training needs nonempty fit, inlier and outlier sets"));
    }
    let idx = aug.free_indices();
    let mut theta = free_values(net, &idx);
    let mut current = with_free(net, &idx, &theta)?;
    aug.mask_gradient(&crate::network::Gradients::zeros_like(&current))?;
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate, idx.len());
    let mut rng = Rng::new(cfg.seed);
    let steps_per_epoch = |size: Option<usize>, m: usize| size.map_or(1, |b| m.div_ceil(b));
    let steps = steps_per_epoch(cfg.in_batch, data.inliers.rows()).max(steps_per_epoch(cfg.out_batch, data.outliers.rows()));
    let mut history = Vec::with_capacity(cfg.epochs * steps);
    for epoch in 0..cfg.epochs {
        let in_order = rng.permutation(data.inliers.rows());
        let out_order = rng.permutation(data.outliers.rows());
        for step in 0..steps {
            let inl = batch(data.inliers, cfg.in_batch, step, &in_order);
            let out = batch(data.outliers, cfg.out_batch, step, &out_order);
            let od = ObjectiveData { fit: data.fit, inliers: &inl, outliers: &out };
            let variance = cfg.variance_config(cfg.seed.wrapping_add((epoch * steps + step) as u64));
            let (value, grad) = match cfg.gradient {
                GradientMethod::Analytic => {
                    let (v, g) = analytic_gradient(&current, od, loss, lambda)?;
                    let g = aug.mask_gradient(&g)?.to_flat();
                    (v, idx.iter().map(|&i| g[i]).collect::<Vec<f64>>())
                }
                GradientMethod::FiniteDifference => {
                    let (v, _) = objective_at(&current, od, loss, cfg.curvature, lambda, &variance)?;
                    let g = finite_difference_gradient(&current, aug, od, loss, lambda, cfg.curvature, &variance, cfg.fd_step)?;
                    (v, g)
                }
            };
            if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("LULA objective diverged at epoch {} (value {value})", epoch + 1)));
            }
            log::debug!("lula epoch {} step {step}: objective {value:.6e}", epoch + 1);
            history.push(value);
            opt.step(&mut theta, &grad);
            current = with_free(&current, &idx, &theta)?;
        }
    }
    let posterior = last_layer_posterior(&current, data.fit, loss, cfg.curvature, lambda)?;
    Ok(LulaOutcome { net: current, history, posterior })
}

/// Grid-search inputs beyond the LULA training setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub candidates: Vec<usize>,
    /// Posterior used to score each trained candidate.
    pub eval_curvature: CurvatureKind,
    pub predict: PredictConfig,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { candidates: vec![32, 64, 128, 256, 512], eval_curvature: CurvatureKind::KfacLastLayer, predict: PredictConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub units: usize,
    /// `|1 - MMC_in| + |1/k - MMC_out|`; `None` when the candidate failed.
    pub score: Option<f64>,
    pub mmc_in: Option<f64>,
    pub mmc_out: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: usize,
    pub scores: Vec<GridScore>,
}

/// Smallest score, preferring the smaller unit count on ties.
pub fn best_units(scores: &[GridScore]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for s in scores {
        if let Some(v) = s.score.filter(|v| !v.is_nan()) {
            let better = match best {
                None => true,
                Some((m, b)) => v < b || (v == b && s.units < m),
            };
            if better {
                best = Some((s.units, v));
            }
        }
    }
    best.map(|(m, _)| m)
}

/// Trains LULA with each candidate number of penultimate-layer units and
/// keeps the one whose validation confidences are closest to 1 on inliers
/// and `1/k` on outliers.
#[allow(clippy::too_many_arguments)]
pub fn grid_search_units(
    net: &Network,
    data: LulaData<'_>,
    in_val: &Matrix,
    out_val: &Matrix,
    loss: &LossKind,
    lambda: f64,
    cfg: &LulaTrainConfig,
    grid: &GridConfig,
) -> Result<GridResult> {
    if grid.candidates.is_empty() {
        return Err(Error::invalid("empty unit-count grid"));
    }
    if !loss.is_classification() {
        return Err(Error::invalid("the unit-count search scores confidences and needs a classification model"));
    }
    let mut candidates = grid.candidates.clone();
    candidates.sort_unstable();
    candidates.dedup();
    let mut scores = Vec::with_capacity(candidates.len());
    for &m in &candidates {
        let attempt = || -> Result<(f64, f64, f64)> {
            let (aug_net, aug) = augment(net, &penultimate_counts(net, m), &mut Rng::new(cfg.seed), InitStd::default())?;
            let trained = train_lula(&aug_net, &aug, data, loss, lambda, cfg)?;
            let post = last_layer_posterior(&trained.net, data.fit, loss, grid.eval_curvature, lambda)?;
            let p_in = predict(&trained.net, &post, in_val, loss, &grid.predict)?;
            let p_out = predict(&trained.net, &post, out_val, loss, &grid.predict)?;
            let (p_in, p_out) = (p_in.probabilities().expect("classification"), p_out.probabilities().expect("classification"));
            let k = p_in.cols() as f64;
            let (a, b) = (mmc(p_in)?, mmc(p_out)?);
            Ok(((1.0 - a).abs() + (1.0 / k - b).abs(), a, b))
        };
        scores.push(match attempt() {
            Ok((s, a, b)) => {
                log::info!("{m} LULA units: score {s:.4} (in {a:.4}, out {b:.4})");
                GridScore { units: m, score: Some(s), mmc_in: Some(a), mmc_out: Some(b) }
            }
            Err(e) => {
                log::warn!("{m} LULA units skipped: {e}");
                GridScore { units: m, score: None, mmc_in: None, mmc_out: None }
            }
        });
    }
    let best = best_units(&scores).ok_or_else(|| Error::NoViableCandidate("every unit count failed".into()))?;
    Ok(GridResult { best, scores })
}
