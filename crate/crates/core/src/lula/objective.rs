use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laplace::{
    build_posterior, fit_curvature, last_layer_params, linearized_variances, mc_output_moments, CurvatureKind, LaplacePosterior,
    Subset, DEFAULT_FULL_CAP,
};
use crate::network::{Gradients, Network};
use crate::numerics::{Matrix, Rng};
use crate::training::LossKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceEvaluator {
    /// Sample variance of the outputs over posterior draws.
    Mc,
    /// Sum of the linearized per-output variances.
    Linearized,
}

/// How the total output variance `ν(x)` is computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceConfig {
    pub evaluator: VarianceEvaluator,
    pub samples: usize,
    pub seed: u64,
}

impl Default for VarianceConfig {
    fn default() -> Self {
        Self { evaluator: VarianceEvaluator::Linearized, samples: 100, seed: 0 }
    }
}

/// `ν(x) = Σᵢ var fᵢ(x)` for every row of `x`.
///
/// The Monte Carlo estimator uses the population variance over `samples`
/// draws, seeded by `cfg.seed`, so equal inputs give equal estimates.
pub fn total_variance(net: &Network, post: &LaplacePosterior, x: &Matrix, cfg: &VarianceConfig) -> Result<Vec<f64>> {
    let per_output = match cfg.evaluator {
        VarianceEvaluator::Linearized => linearized_variances(net, post, x)?,
        VarianceEvaluator::Mc => mc_output_moments(net, post, x, cfg.samples, &mut Rng::new(cfg.seed))?.1,
    };
    Ok(per_output.row_iter().map(|r| r.iter().sum()).collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean `ν` over the inliers minus mean `ν` over the outliers.
pub fn lula_objective(net: &Network, post: &LaplacePosterior, inliers: &Matrix, outliers: &Matrix, cfg: &VarianceConfig) -> Result<f64> {
    if inliers.rows() == 0 || outliers.rows() == 0 {
        return Err(Error::invalid("the variance objective needs nonempty inlier and outlier batches"));
    }
    Ok(mean(&total_variance(net, post, inliers, cfg)?) - mean(&total_variance(net, post, outliers, cfg)?))
}

/// Data the objective depends on: the posterior is fitted on `fit` and the
/// variance is contrasted between `inliers` and `outliers`.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveData<'a> {
    pub fit: &'a Matrix,
    pub inliers: &'a Matrix,
    pub outliers: &'a Matrix,
}

/// Fits a last-layer posterior to `net` on `data.fit`.
pub fn last_layer_posterior(net: &Network, fit_x: &Matrix, loss: &LossKind, kind: CurvatureKind, lambda: f64) -> Result<LaplacePosterior> {
    let fit = fit_curvature(net, fit_x, loss, kind, Subset::LastLayer, DEFAULT_FULL_CAP)?;
    build_posterior(&fit, last_layer_params(net), lambda)
}

/// Refits the posterior at the current parameters and evaluates the objective.
pub fn objective_at(
    net: &Network,
    data: ObjectiveData<'_>,
    loss: &LossKind,
    kind: CurvatureKind,
    lambda: f64,
    cfg: &VarianceConfig,
) -> Result<(f64, LaplacePosterior)> {
    let post = last_layer_posterior(net, data.fit, loss, kind, lambda)?;
    let value = lula_objective(net, &post, data.inliers, data.outliers, cfg)?;
    Ok((value, post))
}

/// Exact gradient of the objective for a diagonal last-layer posterior and
/// linearized variances, with respect to every network parameter.
///
/// With bias-augmented last-layer features `h̄`, posterior variances
/// `σᵢⱼ = 1 / (Σ_fit Λₓ[ii] h̄ⱼ² + λ)`, `sⱼ = Σᵢ σᵢⱼ` and
/// `cⱼ = mean_in h̄ⱼ² - mean_out h̄ⱼ²`, the objective is `Σⱼ sⱼ cⱼ`.
/// The output Hessians `Λₓ` do not move while only free parameters change,
/// because the output layer ignores the added units. So each feature value
/// `h̄ⱼ(x)` gets the adjoint
///
/// - fit points: `-2 cⱼ h̄ⱼ Σᵢ σᵢⱼ² Λₓ[ii]`
/// - inliers: `2 sⱼ h̄ⱼ / |in|`
/// - outliers: `-2 sⱼ h̄ⱼ / |out|`
///
/// which is backpropagated into the last hidden layer. Earlier layers get
/// zero: through the original units they would move `Λₓ`, which the masked
/// update never does, and their added units feed nothing.
///
/// Gradients for original parameters are not meaningful and are meant to be
/// masked away.
pub fn analytic_gradient(net: &Network, data: ObjectiveData<'_>, loss: &LossKind, lambda: f64) -> Result<(f64, Gradients)> {
    if data.inliers.rows() == 0 || data.outliers.rows() == 0 {
        return Err(Error::invalid("the variance objective needs nonempty inlier and outlier batches"));
    }
    let depth = net.depth();
    if depth < 2 {
        return Err(Error::invalid("the network has no hidden layer"));
    }
    let post = last_layer_posterior(net, data.fit, loss, CurvatureKind::DiagGgn, lambda)?;
    let sigma = post.marginal_variances();
    let k = net.output_dim();
    let hidden = net.last_layer().weight.cols();
    let p = hidden + 1;

    let fit_trace = net.forward(data.fit)?;
    let in_trace = net.forward(data.inliers)?;
    let out_trace = net.forward(data.outliers)?;

    let mean_sq = |h: &Matrix, j: usize| h.row_iter().map(|r| r[j] * r[j]).sum::<f64>() / h.rows() as f64;
    let (h_in, h_out) = (in_trace.penultimate(), out_trace.penultimate());
    let s: Vec<f64> = (0..p).map(|j| (0..k).map(|i| sigma[i * p + j]).sum()).collect();
    let c: Vec<f64> = (0..hidden).map(|j| mean_sq(h_in, j) - mean_sq(h_out, j)).collect();
    // the bias feature is constant, so its term cancels between the two means
    let value = (0..hidden).map(|j| s[j] * c[j]).sum::<f64>();

    let fit_adjoint = {
        let h = fit_trace.penultimate();
        let mut adj = Matrix::zeros(h.rows(), hidden);
        for (r, out) in fit_trace.output().row_iter().enumerate() {
            let lam = loss.output_hessian(out).diag();
            for j in 0..hidden {
                let w: f64 = (0..k).map(|i| sigma[i * p + j].powi(2) * lam[i]).sum();
                adj[(r, j)] = -2.0 * c[j] * h[(r, j)] * w;
            }
        }
        adj
    };
    let set_adjoint = |h: &Matrix, sign: f64| {
        let scale = sign * 2.0 / h.rows() as f64;
        Matrix::from_fn(h.rows(), hidden, |r, j| scale * s[j] * h[(r, j)])
    };
    let in_adjoint = set_adjoint(h_in, 1.0);
    let out_adjoint = set_adjoint(h_out, -1.0);

    // backpropagate through the last hidden layer only
    let l = depth - 2;
    let layer = &net.layers()[l];
    let mut gw = Matrix::zeros(layer.weight.rows(), layer.weight.cols());
    let mut gb = vec![0.0; layer.bias.len()];
    for (trace, adj) in [(&fit_trace, &fit_adjoint), (&in_trace, &in_adjoint), (&out_trace, &out_adjoint)] {
        let pre = &trace.pre_activations[l];
        let input = &trace.activations[l];
        for r in 0..adj.rows() {
            for j in 0..hidden {
                let d = adj[(r, j)] * layer.activation.derivative(pre[(r, j)]);
                if d != 0.0 {
                    gb[j] += d;
                    for (g, &u) in gw.row_mut(j).iter_mut().zip(input.row(r)) {
                        *g += d * u;
                    }
                }
            }
        }
    }
    let mut grads = Gradients::zeros_like(net);
    grads.layers[l] = (gw, gb);
    Ok((value, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laplace::{Curvature, CurvatureFit};
    use crate::lula::{augment, InitStd};
    use crate::network::Activation;

    fn setup(seed: u64) -> (Network, Matrix, Matrix, Matrix) {
        let base = Network::random(&Network::mlp_specs(&[2, 5, 4, 3], Activation::Tanh), &mut Rng::new(seed)).unwrap();
        let (net, _) = augment(&base, &[2, 3], &mut Rng::new(seed + 1), InitStd::Fixed(0.5)).unwrap();
        let mut rng = Rng::new(seed + 2);
        let mut draw = |m: usize, r: f64| Matrix::from_fn(m, 2, |_, _| rng.uniform(-r, r));
        (net, draw(15, 1.0), draw(7, 1.0), draw(9, 6.0))
    }

    #[test]
    fn identical_batches_cancel() {
        let (net, fit, inl, _) = setup(1);
        let post = last_layer_posterior(&net, &fit, &LossKind::CategoricalCe, CurvatureKind::KfacLastLayer, 1.0).unwrap();
        for ev in [VarianceEvaluator::Linearized, VarianceEvaluator::Mc] {
            let cfg = VarianceConfig { evaluator: ev, samples: 30, seed: 4 };
            assert_eq!(lula_objective(&net, &post, &inl, &inl, &cfg).unwrap(), 0.0);
        }
    }

    #[test]
    fn difference_of_means() {
        // identity network with one input: ν(x) = x² σ_w + σ_b
        let net = Network::new(vec![crate::network::Layer {
            weight: Matrix::from_rows(&[[0.3]]).unwrap(),
            bias: vec![0.0],
            activation: Activation::Identity,
        }])
        .unwrap();
        let fit = CurvatureFit { subset: Subset::LastLayer, curvature: Curvature::Diag(vec![0.0, 0.0]) };
        let post = build_posterior(&fit, vec![0.3, 0.0], 1.0).unwrap();
        let inl = Matrix::column(&[0.0]);
        let out = Matrix::column(&[2f64.sqrt()]);
        let v = lula_objective(&net, &post, &inl, &out, &VarianceConfig::default()).unwrap();
        assert!((v + 2.0).abs() < 1e-12);
        let doubled = inl.vstack(&inl).unwrap();
        let v2 = lula_objective(&net, &post, &doubled, &out.vstack(&out).unwrap(), &VarianceConfig::default()).unwrap();
        assert_eq!(v, v2);
    }

    #[test]
    fn collapsed_posterior_has_no_variance() {
        let (net, fit, inl, _) = setup(2);
        let post = last_layer_posterior(&net, &fit, &LossKind::CategoricalCe, CurvatureKind::DiagGgn, 1e12).unwrap();
        for ev in [VarianceEvaluator::Linearized, VarianceEvaluator::Mc] {
            let cfg = VarianceConfig { evaluator: ev, samples: 30, seed: 0 };
            assert!(total_variance(&net, &post, &inl, &cfg).unwrap().iter().all(|&v| v.abs() < 1e-8));
        }
    }

    #[test]
    fn analytic_value_matches_objective() {
        let (net, fit, inl, out) = setup(3);
        let loss = LossKind::CategoricalCe;
        let data = ObjectiveData { fit: &fit, inliers: &inl, outliers: &out };
        let (a, _) = analytic_gradient(&net, data, &loss, 0.7).unwrap();
        let (b, _) = objective_at(&net, data, &loss, CurvatureKind::DiagGgn, 0.7, &VarianceConfig::default()).unwrap();
        assert!((a - b).abs() < 1e-12 * b.abs().max(1.0));
    }

    #[test]
    fn empty_batches_rejected() {
        let (net, fit, inl, _) = setup(4);
        let post = last_layer_posterior(&net, &fit, &LossKind::CategoricalCe, CurvatureKind::DiagGgn, 1.0).unwrap();
        let empty = Matrix::zeros(0, 2);
        assert!(lula_objective(&net, &post, &inl, &empty, &VarianceConfig::default()).is_err());
    }
}
