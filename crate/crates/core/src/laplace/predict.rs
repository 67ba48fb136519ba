use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::curvature::{augment_features, Subset};
use super::posterior::LaplacePosterior;
use crate::error::{Error, Result};
use crate::network::Network;
use crate::numerics::{Matrix, Rng};
use crate::training::{sigmoid, softmax, LossKind};

/// Posterior samples evaluated per parallel batch.
const SAMPLE_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictMethod {
    /// Average over parameter samples.
    Mc,
    /// Linearized variance pushed through the probit approximation
    /// (binary) or reported directly (regression).
    ProbitLinearized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    pub method: PredictMethod,
    pub samples: usize,
    pub seed: u64,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self { method: PredictMethod::Mc, samples: 100, seed: 0 }
    }
}

impl PredictConfig {
    pub fn validate(&self) -> Result<()> {
        if self.method == PredictMethod::Mc && self.samples == 0 {
            return Err(Error::invalid("Monte Carlo prediction needs at least one sample"));
        }
        Ok(())
    }
}

/// Predictive distribution for a batch.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictive {
    /// Class probabilities; a single-logit binary model yields two columns.
    Classification(Matrix),
    /// `total = epistemic + 1/β`.
    Regression { mean: Matrix, epistemic: Matrix, total: Matrix },
}

impl Predictive {
    pub fn probabilities(&self) -> Option<&Matrix> {
        match self {
            Predictive::Classification(p) => Some(p),
            Predictive::Regression { .. } => None,
        }
    }
}

/// `σ(f / √(1 + π v / 8))`.
pub fn probit_predict_binary(f_map: f64, v: f64) -> Result<f64> {
    if !(v >= 0.0) {
        return Err(Error::invalid(format!("variance must be non-negative, got {v}")));
    }
    Ok(sigmoid(f_map / (1.0 + std::f64::consts::PI / 8.0 * v).sqrt()))
}

fn check_subset(net: &Network, post: &LaplacePosterior) -> Result<()> {
    let d = super::curvature::subset_dim(net, post.subset);
    if d != post.dim() {
        return Err(Error::dims(format!("posterior of dimension {} for a subset of {d} parameters", post.dim())));
    }
    Ok(())
}

/// Per-output variance `gᵢᵀ Σ gᵢ` of the network linearized at the mean.
pub fn linearized_variance(net: &Network, post: &LaplacePosterior, x: &[f64]) -> Result<Vec<f64>> {
    let xb = Matrix::from_vec(1, x.len(), x.to_vec())?;
    Ok(linearized_variances(net, post, &xb)?.into_vec())
}

/// Batch form of [`linearized_variance`], one row per input.
pub fn linearized_variances(net: &Network, post: &LaplacePosterior, x: &Matrix) -> Result<Matrix> {
    check_subset(net, post)?;
    let k = net.output_dim();
    let rows: Vec<Vec<f64>> = match post.subset {
        Subset::LastLayer => {
            let feats = augment_features(net.forward(x)?.penultimate());
            (0..feats.rows())
                .into_par_iter()
                .map(|r| (0..k).map(|i| post.last_layer_output_variance(i, feats.row(r))).collect())
                .collect()
        }
        Subset::AllLayers => (0..x.rows())
            .into_par_iter()
            .map(|r| {
                let jac = net.output_jacobian(x.row(r))?;
                Ok(jac.row_iter().map(|g| post.quad_form(g)).collect())
            })
            .collect::<Result<_>>()?,
    };
    Matrix::from_vec(x.rows(), k, rows.concat())
}

/// Evaluates the network outputs on a fixed batch for arbitrary subset
/// parameters.
enum SampleEval<'a> {
    /// Bias-augmented penultimate features; outputs are linear in the sample.
    Last { feats: Matrix, k: usize },
    All { net: &'a Network, x: &'a Matrix },
}

impl<'a> SampleEval<'a> {
    fn new(net: &'a Network, x: &'a Matrix, subset: Subset) -> Result<Self> {
        Ok(match subset {
            Subset::LastLayer => SampleEval::Last { feats: augment_features(net.forward(x)?.penultimate()), k: net.output_dim() },
            Subset::AllLayers => SampleEval::All { net, x },
        })
    }

    fn outputs(&self, theta: &[f64]) -> Result<Matrix> {
        match self {
            SampleEval::Last { feats, k } => {
                let w = Matrix::from_vec(*k, feats.cols(), theta.to_vec())?;
                feats.matmul_t(&w)
            }
            SampleEval::All { net, x } => {
                let mut n = (*net).clone();
                n.set_flat(theta)?;
                n.predict(x)
            }
        }
    }
}

/// Draws `samples` parameter vectors from `post` and folds `f(outputs)` for
/// each into `visit` in draw order. Sampling is sequential in `rng`;
/// evaluation runs in parallel chunks.
fn for_each_sample(
    net: &Network,
    post: &LaplacePosterior,
    x: &Matrix,
    samples: usize,
    rng: &mut Rng,
    mut visit: impl FnMut(Matrix),
) -> Result<()> {
    check_subset(net, post)?;
    let eval = SampleEval::new(net, x, post.subset)?;
    let mut left = samples;
    while left > 0 {
        let n = left.min(SAMPLE_CHUNK);
        let thetas = post.sample(rng, n);
        let outs: Vec<Matrix> = thetas.par_iter().map(|t| eval.outputs(t)).collect::<Result<_>>()?;
        outs.into_iter().for_each(&mut visit);
        left -= n;
    }
    Ok(())
}

/// Monte Carlo mean and (population) variance of the raw network outputs.
pub fn mc_output_moments(
    net: &Network,
    post: &LaplacePosterior,
    x: &Matrix,
    samples: usize,
    rng: &mut Rng,
) -> Result<(Matrix, Matrix)> {
    if samples == 0 {
        return Err(Error::invalid("Monte Carlo needs at least one sample"));
    }
    let k = net.output_dim();
    let mut mean = Matrix::zeros(x.rows(), k);
    let mut m2 = Matrix::zeros(x.rows(), k);
    let mut n = 0.0;
    for_each_sample(net, post, x, samples, rng, |out| {
        n += 1.0;
        // Welford update
        for ((mu, s), &f) in mean.as_mut_slice().iter_mut().zip(m2.as_mut_slice()).zip(out.as_slice()) {
            let d = f - *mu;
            *mu += d / n;
            *s += d * (f - *mu);
        }
    })?;
    Ok((mean, m2.scale(1.0 / n)))
}

fn class_probs(loss: &LossKind, out: &[f64]) -> Vec<f64> {
    match loss {
        LossKind::BinaryCe => {
            let p = sigmoid(out[0]);
            vec![1.0 - p, p]
        }
        _ => softmax(out),
    }
}

/// Predictive distribution under the posterior.
pub fn mc_predict(net: &Network, post: &LaplacePosterior, x: &Matrix, loss: &LossKind, cfg: &PredictConfig) -> Result<Predictive> {
    cfg.validate()?;
    let mut rng = Rng::new(cfg.seed);
    match loss {
        LossKind::GaussianNll { beta } => {
            let (mean, epistemic) = mc_output_moments(net, post, x, cfg.samples, &mut rng)?;
            let total = epistemic.map(|v| v + 1.0 / beta);
            Ok(Predictive::Regression { mean, epistemic, total })
        }
        _ => {
            let cols = if *loss == LossKind::BinaryCe { 2 } else { net.output_dim() };
            let mut acc = Matrix::zeros(x.rows(), cols);
            for_each_sample(net, post, x, cfg.samples, &mut rng, |out| {
                for (r, o) in out.row_iter().enumerate() {
                    for (a, p) in acc.row_mut(r).iter_mut().zip(class_probs(loss, o)) {
                        *a += p;
                    }
                }
            })?;
            Ok(Predictive::Classification(acc.scale(1.0 / cfg.samples as f64)))
        }
    }
}

/// Closed-form predictive from the linearized variance.
///
/// Binary models use the probit approximation; regression reports the MAP
/// output as the mean and the linearized variance as the epistemic part.
pub fn linearized_predict(net: &Network, post: &LaplacePosterior, x: &Matrix, loss: &LossKind) -> Result<Predictive> {
    let f = net.predict(x)?;
    let v = linearized_variances(net, post, x)?;
    match loss {
        LossKind::GaussianNll { beta } => {
            let total = v.map(|e| e + 1.0 / beta);
            Ok(Predictive::Regression { mean: f, epistemic: v, total })
        }
        LossKind::BinaryCe => {
            let mut p = Matrix::zeros(x.rows(), 2);
            for r in 0..x.rows() {
                let p1 = probit_predict_binary(f[(r, 0)], v[(r, 0)])?;
                p.row_mut(r).copy_from_slice(&[1.0 - p1, p1]);
            }
            Ok(Predictive::Classification(p))
        }
        LossKind::CategoricalCe => {
            Err(Error::invalid("the probit predictive is only available for single-logit binary models"))
        }
    }
}

/// Dispatches on `cfg.method`.
pub fn predict(net: &Network, post: &LaplacePosterior, x: &Matrix, loss: &LossKind, cfg: &PredictConfig) -> Result<Predictive> {
    match cfg.method {
        PredictMethod::Mc => mc_predict(net, post, x, loss, cfg),
        PredictMethod::ProbitLinearized => linearized_predict(net, post, x, loss),
    }
}

/// Deterministic predictive of the mean network, in the same shape as
/// [`predict`] output with zero epistemic variance.
pub fn map_predict(net: &Network, x: &Matrix, loss: &LossKind) -> Result<Predictive> {
    let f = net.predict(x)?;
    Ok(match loss {
        LossKind::GaussianNll { beta } => {
            let zeros = Matrix::zeros(f.rows(), f.cols());
            let total = zeros.map(|v| v + 1.0 / beta);
            Predictive::Regression { mean: f, epistemic: zeros, total }
        }
        _ => {
            let rows: Vec<Vec<f64>> = f.row_iter().map(|o| class_probs(loss, o)).collect();
            Predictive::Classification(Matrix::from_rows(&rows)?)
        }
    })
}
