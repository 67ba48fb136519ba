//! Dense feedforward networks.
//!
//! Layer `l` computes `a = W h + b` and `h' = φ(a)`, with the identity on the
//! output layer. Batches are matrices with one sample per row.
//!
//! # Parameter flattening
//!
//! Every module that treats the parameters as a single vector uses the same
//! order: layer by layer from the input, and within a layer the weight matrix
//! in row-major order (`W[0,0], W[0,1], ..`) followed by the bias vector.

mod activation;
pub(crate) mod io;

pub use activation::{Activation, SELU_ALPHA, SELU_LAMBDA};
pub use io::{load, read_from, save, write_to, MODEL_FORMAT_VERSION};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

/// Shape and activation of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

/// One affine layer. `weight` is `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn spec(&self) -> LayerSpec {
        LayerSpec { in_dim: self.weight.cols(), out_dim: self.weight.rows(), activation: self.activation }
    }

    pub fn param_count(&self) -> usize {
        self.weight.rows() * (self.weight.cols() + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
}

/// Pre-activations and activations recorded by [`Network::forward`].
///
/// `activations[0]` is the input batch and `activations[l]` is the output of
/// layer `l`; `pre_activations[l - 1]` is the affine part of layer `l`.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub pre_activations: Vec<Matrix>,
    pub activations: Vec<Matrix>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Matrix {
        self.activations.last().expect("trace always holds the input")
    }

    /// Input to the last layer, `h^(L-1)`.
    pub fn penultimate(&self) -> &Matrix {
        &self.activations[self.activations.len() - 2]
    }
}

/// Per-layer `(weight, bias)` blocks shaped like a network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Matrix, Vec<f64>)>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net.layers.iter().map(|l| (Matrix::zeros(l.weight.rows(), l.weight.cols()), vec![0.0; l.bias.len()])).collect(),
        }
    }

    /// Flattened in the network parameter order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
        out
    }

    pub fn from_flat(net: &Network, flat: &[f64]) -> Result<Self> {
        let mut g = Self::zeros_like(net);
        g.assign_flat(flat)?;
        Ok(g)
    }

    fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.layers.iter().map(|(w, b)| w.as_slice().len() + b.len()).sum();
        if flat.len() != total {
            return Err(Error::dims(format!("flat vector of length {} for {total} parameters", flat.len())));
        }
        let mut off = 0;
        for (w, b) in &mut self.layers {
            let n = w.as_slice().len();
            w.as_mut_slice().copy_from_slice(&flat[off..off + n]);
            off += n;
            let nb = b.len();
            b.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for (w, b) in &mut self.layers {
            w.as_mut_slice().iter_mut().for_each(|v| *v *= s);
            b.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|(w, b)| w.is_finite() && b.iter().all(|v| v.is_finite()))
    }
}

impl Network {
    /// Assembles a network, checking that dimensions chain and that the last
    /// layer is linear.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("a network needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weight.rows() == 0 || l.weight.cols() == 0 {
                return Err(Error::invalid(format!("layer {} has an empty weight matrix", i + 1)));
            }
            if l.bias.len() != l.weight.rows() {
                return Err(Error::dims(format!(
                    "layer {} bias has {} entries for {} units",
                    i + 1,
                    l.bias.len(),
                    l.weight.rows()
                )));
            }
            if i > 0 && layers[i - 1].weight.rows() != l.weight.cols() {
                return Err(Error::dims(format!(
                    "layer {} expects {} inputs but layer {} has {} units",
                    i + 1,
                    l.weight.cols(),
                    i,
                    layers[i - 1].weight.rows()
                )));
            }
        }
        if layers.last().map(|l| l.activation) != Some(Activation::Identity) {
            return Err(Error::invalid("the output layer must use the identity activation"));
        }
        Ok(Self { layers })
    }

    /// Random initialization: weights `N(0, gain / fan_in)` with gain 2 for
    /// relu/selu layers and 1 otherwise; biases zero.
    pub fn random(specs: &[LayerSpec], rng: &mut Rng) -> Result<Self> {
        let layers = specs
            .iter()
            .map(|s| {
                let std = (s.activation.init_gain() / s.in_dim.max(1) as f64).sqrt();
                Layer {
                    weight: Matrix::from_fn(s.out_dim, s.in_dim, |_, _| std * rng.normal()),
                    bias: vec![0.0; s.out_dim],
                    activation: s.activation,
                }
            })
            .collect();
        Self::new(layers)
    }

    /// Builds specs for an MLP with the given widths, e.g. `[2, 64, 64, 2]`.
    pub fn mlp_specs(widths: &[usize], hidden: Activation) -> Vec<LayerSpec> {
        let n = widths.len().saturating_sub(1);
        (0..n)
            .map(|i| LayerSpec {
                in_dim: widths[i],
                out_dim: widths[i + 1],
                activation: if i + 1 == n { Activation::Identity } else { hidden },
            })
            .collect()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable access to the layers. Callers must keep shapes intact.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.rows()
    }

    pub fn last_layer(&self) -> &Layer {
        &self.layers[self.layers.len() - 1]
    }

    /// `d = Σ n_l (n_{l-1} + 1)`.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Offset of layer `l` (zero-based) in the flattened parameter vector.
    pub fn layer_offset(&self, l: usize) -> usize {
        self.layers[..l].iter().map(Layer::param_count).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::dims(format!("flat vector of length {} for {} parameters", flat.len(), self.param_count())));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let n = l.weight.as_slice().len();
            l.weight.as_mut_slice().copy_from_slice(&flat[off..off + n]);
            off += n;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    pub fn squared_norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().iter().chain(&l.bias).map(|v| v * v).sum::<f64>())
            .sum()
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::dims(format!("input has {} features, network expects {}", x.cols(), self.input_dim())));
        }
        Ok(())
    }

    /// Forward pass over a batch, keeping every intermediate.
    pub fn forward(&self, x: &Matrix) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len() + 1);
        post.push(x.clone());
        for layer in &self.layers {
            let h = post.last().expect("non-empty");
            let a = affine(layer, h);
            let act = layer.activation;
            post.push(if act == Activation::Identity { a.clone() } else { a.map(|v| act.apply(v)) });
            pre.push(a);
        }
        Ok(ForwardTrace { pre_activations: pre, activations: post })
    }

    /// Network output for a batch.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            let act = layer.activation;
            h = affine(layer, &h);
            if act != Activation::Identity {
                h = h.map(|v| act.apply(v));
            }
        }
        Ok(h)
    }

    pub fn predict_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.predict(&Matrix::from_vec(1, x.len(), x.to_vec())?)?.into_vec())
    }

    /// Reverse pass: gradients of `Σ output_grad ⊙ output` with respect to
    /// every weight, bias and input.
    pub fn backward(&self, trace: &ForwardTrace, output_grad: &Matrix) -> Result<(Gradients, Matrix)> {
        if trace.activations.len() != self.layers.len() + 1 {
            return Err(Error::dims("trace depth does not match the network"));
        }
        let out = trace.output();
        if output_grad.shape() != out.shape() {
            return Err(Error::dims(format!(
                "output gradient {:?} for outputs {:?}",
                output_grad.shape(),
                out.shape()
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        // δ for the current layer's pre-activation
        let mut delta = output_grad.clone();
        let last = self.layers.len() - 1;
        if self.layers[last].activation != Activation::Identity {
            apply_derivative(&mut delta, &trace.pre_activations[last], self.layers[last].activation);
        }
        for l in (0..self.layers.len()).rev() {
            let h_in = &trace.activations[l];
            let gw = delta.transpose().matmul(h_in)?;
            let mut gb = vec![0.0; delta.cols()];
            for r in delta.row_iter() {
                for (g, &d) in gb.iter_mut().zip(r) {
                    *g += d;
                }
            }
            grads.push((gw, gb));
            let mut prev = delta.matmul(&self.layers[l].weight)?;
            if l > 0 {
                apply_derivative(&mut prev, &trace.pre_activations[l - 1], self.layers[l - 1].activation);
            }
            delta = prev;
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, delta))
    }

    /// `k x d` Jacobian of the outputs with respect to the flattened
    /// parameters at a single input.
    pub fn output_jacobian(&self, x: &[f64]) -> Result<Matrix> {
        let xb = Matrix::from_vec(1, x.len(), x.to_vec())?;
        let trace = self.forward(&xb)?;
        let k = self.output_dim();
        let mut jac = Matrix::zeros(k, self.param_count());
        for i in 0..k {
            let mut seed = Matrix::zeros(1, k);
            seed[(0, i)] = 1.0;
            let (g, _) = self.backward(&trace, &seed)?;
            jac.row_mut(i).copy_from_slice(&g.to_flat());
        }
        Ok(jac)
    }
}

fn affine(layer: &Layer, h: &Matrix) -> Matrix {
    let mut a = h.matmul_t(&layer.weight).expect("shapes checked by caller");
    for r in 0..a.rows() {
        for (v, &b) in a.row_mut(r).iter_mut().zip(&layer.bias) {
            *v += b;
        }
    }
    a
}

fn apply_derivative(delta: &mut Matrix, pre: &Matrix, act: Activation) {
    if act == Activation::Identity {
        return;
    }
    for (d, &a) in delta.as_mut_slice().iter_mut().zip(pre.as_slice()) {
        *d *= act.derivative(a);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn affine_net(w: f64, b: f64) -> Network {
        Network::new(vec![Layer {
            weight: Matrix::from_rows(&[[w]]).unwrap(),
            bias: vec![b],
            activation: Activation::Identity,
        }])
        .unwrap()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let specs = Network::mlp_specs(&[3, 4, 2], Activation::Relu);
        let mut net = Network::random(&specs, &mut Rng::new(0)).unwrap();
        let zeros = vec![0.0; net.param_count()];
        net.set_flat(&zeros).unwrap();
        let x = Matrix::from_rows(&[[1.0, -2.0, 3.0], [0.5, 0.5, 0.5]]).unwrap();
        assert!(net.predict(&x).unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn affine_hand_evaluation() {
        let net = affine_net(2.0, 1.0);
        assert_eq!(net.predict_one(&[3.0]).unwrap(), vec![7.0]);
    }

    #[test]
    fn forward_is_deterministic() {
        let specs = Network::mlp_specs(&[2, 5, 5, 3], Activation::Tanh);
        let net = Network::random(&specs, &mut Rng::new(4)).unwrap();
        let x = Matrix::from_rows(&[[0.3, -1.2]]).unwrap();
        assert_eq!(net.predict(&x).unwrap(), net.predict(&x).unwrap());
        assert_eq!(net.forward(&x).unwrap().output(), &net.predict(&x).unwrap());
    }

    #[test]
    fn rejects_bad_shapes() {
        let bad = Network::new(vec![
            Layer { weight: Matrix::zeros(3, 2), bias: vec![0.0; 3], activation: Activation::Relu },
            Layer { weight: Matrix::zeros(1, 4), bias: vec![0.0], activation: Activation::Identity },
        ]);
        assert!(bad.is_err());
        let nonlinear_out =
            Network::new(vec![Layer { weight: Matrix::zeros(1, 2), bias: vec![0.0], activation: Activation::Relu }]);
        assert!(nonlinear_out.is_err());
        let net = affine_net(1.0, 0.0);
        assert!(net.forward(&Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        let specs = Network::mlp_specs(&[2, 3, 1], Activation::Tanh);
        let net = Network::random(&specs, &mut Rng::new(1)).unwrap();
        let x = Matrix::from_rows(&[[0.2, 0.9], [-1.0, 0.1]]).unwrap();
        let trace = net.forward(&x).unwrap();
        let (g, gx) = net.backward(&trace, &Matrix::zeros(2, 1)).unwrap();
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
        assert!(gx.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn affine_backward_by_hand() {
        let net = Network::new(vec![Layer {
            weight: Matrix::from_rows(&[[0.5, -1.0, 2.0]]).unwrap(),
            bias: vec![0.3],
            activation: Activation::Identity,
        }])
        .unwrap();
        let x = Matrix::from_rows(&[[1.5, -2.0, 0.25]]).unwrap();
        let trace = net.forward(&x).unwrap();
        let (g, gx) = net.backward(&trace, &Matrix::from_rows(&[[1.0]]).unwrap()).unwrap();
        assert_eq!(g.layers[0].0.as_slice(), x.as_slice());
        assert_eq!(g.layers[0].1, vec![1.0]);
        assert_eq!(gx.as_slice(), &[0.5, -1.0, 2.0]);
    }

    #[test]
    fn linear_jacobian_is_affine() {
        let net = Network::new(vec![Layer {
            weight: Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap(),
            bias: vec![0.0, 0.0],
            activation: Activation::Identity,
        }])
        .unwrap();
        let j = net.output_jacobian(&[5.0, 7.0]).unwrap();
        // flattening: W00 W01 W10 W11 b0 b1
        assert_eq!(j.row(0), &[5.0, 7.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(j.row(1), &[0.0, 0.0, 5.0, 7.0, 0.0, 1.0]);
    }

    #[test]
    fn jacobian_shape_single_output() {
        let specs = Network::mlp_specs(&[3, 4, 1], Activation::Relu);
        let net = Network::random(&specs, &mut Rng::new(2)).unwrap();
        assert_eq!(net.output_jacobian(&[0.1, 0.2, 0.3]).unwrap().shape(), (1, net.param_count()));
    }

    #[test]
    fn flat_round_trip() {
        let specs = Network::mlp_specs(&[2, 3, 2], Activation::Selu);
        let mut net = Network::random(&specs, &mut Rng::new(5)).unwrap();
        let flat = net.to_flat();
        assert_eq!(flat.len(), 2 * 3 + 3 + 3 * 2 + 2);
        net.set_flat(&flat).unwrap();
        assert_eq!(net.to_flat(), flat);
        assert_eq!(net.layer_offset(1), 9);
        assert!(net.set_flat(&flat[1..]).is_err());
    }
}
