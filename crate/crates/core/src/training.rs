//! MAP estimation: likelihood losses, the weight-decay prior, optimizers.
//!
//! Losses are negative log-likelihoods with additive normalization constants
//! dropped (no `½ log 2π` or `log β` terms), so values are only comparable
//! between runs that share the likelihood precision.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Targets};
use crate::error::{Error, Result};
use crate::network::{Gradients, Network};
use crate::numerics::{Matrix, Rng};

/// Likelihood attached to the network output.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossKind {
    /// `y ~ N(f, β⁻¹ I)`.
    GaussianNll { beta: f64 },
    /// Softmax over `k` logits.
    #[default]
    CategoricalCe,
    /// One logit, labels in `{0, 1}`.
    BinaryCe,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl LossKind {
    pub fn validate(&self) -> Result<()> {
        if let LossKind::GaussianNll { beta } = self {
            if !(*beta > 0.0) || !beta.is_finite() {
                return Err(Error::invalid(format!("likelihood precision must be positive, got {beta}")));
            }
        }
        Ok(())
    }

    pub fn is_classification(&self) -> bool {
        !matches!(self, LossKind::GaussianNll { .. })
    }

    /// Checks that `targets` fit a network with `k` outputs.
    pub fn check_targets(&self, targets: &Targets, k: usize) -> Result<()> {
        match (self, targets) {
            (LossKind::GaussianNll { .. }, Targets::Values(v)) if v.cols() == k => Ok(()),
            (LossKind::CategoricalCe, Targets::Labels { classes, .. }) if *classes == k => Ok(()),
            (LossKind::BinaryCe, Targets::Labels { classes: 2, .. }) if k == 1 => Ok(()),
            _ => Err(Error::invalid(format!("{self:?} does not match the targets for a network with {k} outputs"))),
        }
    }

    /// Negative log-likelihood of sample `i` and its gradient in output space.
    pub fn point(&self, output: &[f64], targets: &Targets, i: usize) -> (f64, Vec<f64>) {
        match (self, targets) {
            (LossKind::GaussianNll { beta }, Targets::Values(y)) => {
                let r: Vec<f64> = output.iter().zip(y.row(i)).map(|(f, t)| f - t).collect();
                let value = 0.5 * beta * r.iter().map(|v| v * v).sum::<f64>();
                (value, r.into_iter().map(|v| beta * v).collect())
            }
            (LossKind::CategoricalCe, Targets::Labels { labels, .. }) => {
                let y = labels[i];
                let value = log_sum_exp(output) - output[y];
                let mut g = softmax(output);
                g[y] -= 1.0;
                (value, g)
            }
            (LossKind::BinaryCe, Targets::Labels { labels, .. }) => {
                let z = output[0];
                let y = labels[i] as f64;
                (softplus(z) - y * z, vec![sigmoid(z) - y])
            }
            _ => panic!("targets do not match loss; call check_targets first"),
        }
    }

    /// Hessian of the negative log-likelihood with respect to the output.
    ///
    /// Does not depend on the target for any of the supported likelihoods.
    pub fn output_hessian(&self, output: &[f64]) -> Matrix {
        match self {
            LossKind::GaussianNll { beta } => Matrix::identity(output.len()).scale(*beta),
            LossKind::CategoricalCe => {
                let p = softmax(output);
                let mut h = Matrix::from_diag(&p);
                h.add_outer(-1.0, &p, &p);
                h
            }
            LossKind::BinaryCe => {
                let s = sigmoid(output[0]);
                Matrix::from_rows(&[[s * (1.0 - s)]]).expect("1x1")
            }
        }
    }
}

/// Data term and gradient over a batch, scaled by `scale`.
fn data_term(net: &Network, x: &Matrix, targets: &Targets, loss: &LossKind, scale: f64) -> Result<(f64, Gradients)> {
    loss.check_targets(targets, net.output_dim())?;
    let trace = net.forward(x)?;
    let out = trace.output();
    let mut value = 0.0;
    let mut og = Matrix::zeros(out.rows(), out.cols());
    for i in 0..out.rows() {
        let (v, g) = loss.point(out.row(i), targets, i);
        value += v;
        og.row_mut(i).iter_mut().zip(g).for_each(|(d, s)| *d = scale * s);
    }
    let (grads, _) = net.backward(&trace, &og)?;
    Ok((scale * value, grads))
}

fn add_decay(net: &Network, grads: &mut Gradients, coef: f64) {
    for (layer, (gw, gb)) in net.layers().iter().zip(&mut grads.layers) {
        for (g, &w) in gw.as_mut_slice().iter_mut().zip(layer.weight.as_slice()) {
            *g += coef * w;
        }
        for (g, &b) in gb.iter_mut().zip(&layer.bias) {
            *g += coef * b;
        }
    }
}

/// `Σᵢ -log p(yᵢ | f(xᵢ; θ)) + (λ/2)‖θ‖²` and its gradient.
pub fn map_loss(net: &Network, x: &Matrix, targets: &Targets, loss: &LossKind, lambda: f64) -> Result<(f64, Gradients)> {
    if x.rows() == 0 {
        return Err(Error::invalid("map_loss needs a non-empty batch"));
    }
    loss.validate()?;
    let (data, mut grads) = data_term(net, x, targets, loss, 1.0)?;
    let value = data + 0.5 * lambda * net.squared_norm();
    add_decay(net, &mut grads, lambda);
    if !value.is_finite() || !grads.is_finite() {
        return Err(Error::NonFinite(format!("MAP loss evaluated to {value}")));
    }
    Ok((value, grads))
}

/// First-order update rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Optimizer {
    Sgd {
        #[serde(default)]
        momentum: f64,
    },
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam { beta1: default_beta1(), beta2: default_beta2(), eps: default_eps() }
    }
}

/// Running optimizer state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    rule: Optimizer,
    learning_rate: f64,
    step: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl OptimizerState {
    pub fn new(rule: Optimizer, learning_rate: f64, dim: usize) -> Self {
        Self { rule, learning_rate, step: 0, first: vec![0.0; dim], second: vec![0.0; dim] }
    }

    /// In-place descent step on `params`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), grad.len());
        self.step += 1;
        let lr = self.learning_rate;
        match self.rule {
            Optimizer::Sgd { momentum } => {
                for ((p, &g), v) in params.iter_mut().zip(grad).zip(&mut self.first) {
                    *v = momentum * *v + g;
                    *p -= lr * *v;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.step as i32);
                let c2 = 1.0 - beta2.powi(self.step as i32);
                for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.first).zip(&mut self.second) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Prior precision λ of the isotropic Gaussian prior.
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { optimizer: Optimizer::default(), learning_rate: 1e-3, epochs: 100, batch_size: 32, weight_decay: 1.0, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight decay must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        Ok(())
    }
}

/// Minimizes the MAP objective with minibatches.
///
/// Each step follows the per-example objective
/// `(1/B) Σ_batch nll + (λ / 2m) ‖θ‖²`, an unbiased estimate of the full
/// objective divided by the dataset size `m`. The returned history holds the
/// mean of that quantity over each epoch's batches. Zero epochs return the
/// input network unchanged.
pub fn train_map(net: &Network, data: &Dataset, loss: &LossKind, cfg: &TrainConfig) -> Result<(Network, Vec<f64>)> {
    cfg.validate()?;
    loss.validate()?;
    loss.check_targets(&data.targets, net.output_dim())?;
    let mut net = net.clone();
    let mut history = Vec::with_capacity(cfg.epochs);
    if cfg.epochs == 0 {
        return Ok((net, history));
    }
    if data.is_empty() {
        return Err(Error::invalid("training data is empty"));
    }
    let m = data.len();
    let mut rng = Rng::new(cfg.seed);
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate, net.param_count());
    let mut params = net.to_flat();
    let decay = cfg.weight_decay / m as f64;
    for epoch in 0..cfg.epochs {
        let order = rng.permutation(m);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.select(chunk);
            let (v, mut g) = data_term(&net, &batch.features, &batch.targets, loss, 1.0 / chunk.len() as f64)?;
            let value = v + 0.5 * decay * net.squared_norm();
            add_decay(&net, &mut g, decay);
            if !value.is_finite() || !g.is_finite() {
                return Err(Error::NonFinite(format!("training diverged in epoch {epoch} (loss {value})")));
            }
            opt.step(&mut params, &g.to_flat());
            net.set_flat(&params)?;
            total += value;
            batches += 1;
        }
        history.push(total / batches as f64);
    }
    Ok((net, history))
}

/// Fraction of rows whose arg-max output matches the label (or, for a single
/// logit, whose sign matches).
pub fn accuracy(net: &Network, data: &Dataset) -> Result<f64> {
    let labels = data.labels().ok_or_else(|| Error::invalid("accuracy needs labels"))?;
    let out = net.predict(&data.features)?;
    let hits = out.row_iter().zip(labels).filter(|(r, &y)| predicted_class(r) == y).count();
    Ok(hits as f64 / labels.len().max(1) as f64)
}

/// Arg-max class, with a single logit read as binary.
pub fn predicted_class(output: &[f64]) -> usize {
    if output.len() == 1 {
        return usize::from(output[0] > 0.0);
    }
    let mut best = 0;
    for (i, &v) in output.iter().enumerate() {
        if v > output[best] {
            best = i;
        }
    }
    best
}
