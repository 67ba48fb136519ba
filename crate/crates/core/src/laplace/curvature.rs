use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Layer, Network};
use crate::numerics::Matrix;
use crate::training::LossKind;

/// Default cap on the parameter count for dense curvature.
pub const DEFAULT_FULL_CAP: usize = 5000;

/// Points per parallel work item when accumulating curvature. Partial sums
/// are combined in chunk order, so results do not depend on thread count.
const CHUNK: usize = 32;

/// Which parameters the Gaussian covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    /// Every weight and bias, in the network flattening order.
    AllLayers,
    /// The output layer only, flattened row-major over the bias-augmented
    /// matrix `[W | b]` (shape `k x (n + 1)`), so index `i * (n + 1) + j`
    /// is `W[i, j]` for `j < n` and `b[i]` for `j = n`.
    LastLayer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurvatureKind {
    FullGgn,
    DiagGgn,
    /// `G ⊗ A` over the last layer.
    KfacLastLayer,
}

/// Data-term generalized Gauss-Newton matrix in one of three representations.
#[derive(Debug, Clone, PartialEq)]
pub enum Curvature {
    Full(Matrix),
    Diag(Vec<f64>),
    /// `G` (`k x k`) is summed over the data and `A` (`(n+1) x (n+1)`, over
    /// bias-augmented features) is averaged, so `G ⊗ A` approximates the
    /// summed GGN of the last layer.
    Kron { g: Matrix, a: Matrix },
}

impl Curvature {
    pub fn dim(&self) -> usize {
        match self {
            Curvature::Full(h) => h.rows(),
            Curvature::Diag(h) => h.len(),
            Curvature::Kron { g, a } => g.rows() * a.rows(),
        }
    }

    /// Dense form, for tests and small problems.
    pub fn to_dense(&self) -> Matrix {
        match self {
            Curvature::Full(h) => h.clone(),
            Curvature::Diag(h) => Matrix::from_diag(h),
            Curvature::Kron { g, a } => crate::numerics::kron(g, a),
        }
    }
}

/// Curvature together with the subset it describes.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureFit {
    pub subset: Subset,
    pub curvature: Curvature,
}

/// Bias-augmented inputs `[h, 1]` of the last layer for a batch.
pub fn last_layer_features(net: &Network, x: &Matrix) -> Result<Matrix> {
    let trace = net.forward(x)?;
    Ok(augment_features(trace.penultimate()))
}

pub(crate) fn augment_features(h: &Matrix) -> Matrix {
    Matrix::from_fn(h.rows(), h.cols() + 1, |i, j| if j < h.cols() { h[(i, j)] } else { 1.0 })
}

/// Last-layer parameters as a flat `[W | b]` row-major vector.
pub fn last_layer_params(net: &Network) -> Vec<f64> {
    let l = net.last_layer();
    let n = l.weight.cols();
    let mut out = Vec::with_capacity(l.weight.rows() * (n + 1));
    for (i, r) in l.weight.row_iter().enumerate() {
        out.extend_from_slice(r);
        out.push(l.bias[i]);
    }
    out
}

/// Writes a flat `[W | b]` vector into the last layer.
pub fn set_last_layer_params(net: &mut Network, theta: &[f64]) -> Result<()> {
    let last = net.depth() - 1;
    let layer: &mut Layer = &mut net.layers_mut()[last];
    let (k, n) = layer.weight.shape();
    if theta.len() != k * (n + 1) {
        return Err(Error::dims(format!("last-layer vector of length {} for a {k}x{} layer", theta.len(), n + 1)));
    }
    for i in 0..k {
        let row = &theta[i * (n + 1)..(i + 1) * (n + 1)];
        layer.weight.row_mut(i).copy_from_slice(&row[..n]);
        layer.bias[i] = row[n];
    }
    Ok(())
}

pub fn subset_params(net: &Network, subset: Subset) -> Vec<f64> {
    match subset {
        Subset::AllLayers => net.to_flat(),
        Subset::LastLayer => last_layer_params(net),
    }
}

pub fn set_subset_params(net: &mut Network, subset: Subset, theta: &[f64]) -> Result<()> {
    match subset {
        Subset::AllLayers => net.set_flat(theta),
        Subset::LastLayer => set_last_layer_params(net, theta),
    }
}

pub fn subset_dim(net: &Network, subset: Subset) -> usize {
    match subset {
        Subset::AllLayers => net.param_count(),
        Subset::LastLayer => net.output_dim() * (net.last_layer().weight.cols() + 1),
    }
}

fn chunk_sum<T: Send>(m: usize, zero: impl Fn() -> T + Sync, work: impl Fn(std::ops::Range<usize>, &mut T) + Sync, add: impl Fn(&mut T, T)) -> T {
    let starts: Vec<usize> = (0..m).step_by(CHUNK).collect();
    let parts: Vec<T> = starts
        .par_iter()
        .map(|&s| {
            let mut acc = zero();
            work(s..(s + CHUNK).min(m), &mut acc);
            acc
        })
        .collect();
    let mut total = zero();
    for p in parts {
        add(&mut total, p);
    }
    total
}

fn add_mat(a: &mut Matrix, b: Matrix) {
    a.as_mut_slice().iter_mut().zip(b.as_slice()).for_each(|(x, y)| *x += y);
}

#[allow(clippy::ptr_arg)] // passed where `fn(&mut Vec<f64>, Vec<f64>)` is expected
fn add_vec(a: &mut Vec<f64>, b: Vec<f64>) {
    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
}

/// Generalized Gauss-Newton curvature of the negative log-likelihood.
///
/// For each input `x`, `Λₓ` is the output-space Hessian of the loss
/// (`β I`, `diag(p) - ppᵀ` or `σ(1-σ)`), and the data term is
/// `Σₓ Jₓᵀ Λₓ Jₓ` with `Jₓ` the output Jacobian restricted to `subset`.
pub fn fit_curvature(
    net: &Network,
    x: &Matrix,
    loss: &LossKind,
    kind: CurvatureKind,
    subset: Subset,
    full_cap: usize,
) -> Result<CurvatureFit> {
    if x.rows() == 0 {
        return Err(Error::invalid("curvature needs at least one input"));
    }
    loss.validate()?;
    let d = subset_dim(net, subset);
    if kind == CurvatureKind::FullGgn && d > full_cap {
        return Err(Error::invalid(format!("dense curvature over {d} parameters exceeds the cap of {full_cap}")));
    }
    if kind == CurvatureKind::KfacLastLayer && subset != Subset::LastLayer {
        return Err(Error::invalid("Kronecker-factored curvature is only available for the last layer"));
    }
    let trace = net.forward(x)?;
    let out = trace.output();
    let m = x.rows();
    let k = net.output_dim();
    let lambdas: Vec<Matrix> = out.row_iter().map(|r| loss.output_hessian(r)).collect();

    let curvature = match subset {
        Subset::LastLayer => {
            let feats = augment_features(trace.penultimate());
            let p = feats.cols();
            match kind {
                CurvatureKind::KfacLastLayer => {
                    let mut g = Matrix::zeros(k, k);
                    for l in &lambdas {
                        add_mat(&mut g, l.clone());
                    }
                    let mut a = chunk_sum(
                        m,
                        || Matrix::zeros(p, p),
                        |r, acc| {
                            for i in r {
                                acc.add_outer(1.0, feats.row(i), feats.row(i));
                            }
                        },
                        add_mat,
                    );
                    a = a.scale(1.0 / m as f64);
                    Curvature::Kron { g, a }
                }
                CurvatureKind::DiagGgn => {
                    let mut h = vec![0.0; k * p];
                    for (i, l) in lambdas.iter().enumerate() {
                        let f = feats.row(i);
                        for c in 0..k {
                            let lcc = l[(c, c)];
                            for (hj, &fj) in h[c * p..(c + 1) * p].iter_mut().zip(f) {
                                *hj += lcc * fj * fj;
                            }
                        }
                    }
                    Curvature::Diag(h)
                }
                CurvatureKind::FullGgn => {
                    let h = chunk_sum(
                        m,
                        || Matrix::zeros(k * p, k * p),
                        |r, acc| {
                            for i in r {
                                let f = feats.row(i);
                                let l = &lambdas[i];
                                for a in 0..k {
                                    for b in 0..k {
                                        let s = l[(a, b)];
                                        if s == 0.0 {
                                            continue;
                                        }
                                        for (u, &fu) in f.iter().enumerate() {
                                            let row = &mut acc.row_mut(a * p + u)[b * p..(b + 1) * p];
                                            crate::numerics::axpy(s * fu, f, row);
                                        }
                                    }
                                }
                            }
                        },
                        add_mat,
                    );
                    Curvature::Full(h)
                }
            }
        }
        Subset::AllLayers => {
            let jac = |i: usize| net.output_jacobian(x.row(i)).expect("input width checked by forward");
            match kind {
                CurvatureKind::FullGgn => {
                    let h = chunk_sum(
                        m,
                        || Matrix::zeros(d, d),
                        |r, acc| {
                            for i in r {
                                let j = jac(i);
                                let lj = lambdas[i].matmul(&j).expect("k x k by k x d");
                                for a in 0..k {
                                    acc.add_outer(1.0, j.row(a), lj.row(a));
                                }
                            }
                        },
                        add_mat,
                    );
                    Curvature::Full(h)
                }
                CurvatureKind::DiagGgn => {
                    let h = chunk_sum(
                        m,
                        || vec![0.0; d],
                        |r, acc| {
                            for i in r {
                                let j = jac(i);
                                let lj = lambdas[i].matmul(&j).expect("k x k by k x d");
                                for a in 0..k {
                                    for ((h, &u), &v) in acc.iter_mut().zip(j.row(a)).zip(lj.row(a)) {
                                        *h += u * v;
                                    }
                                }
                            }
                        },
                        add_vec,
                    );
                    Curvature::Diag(h)
                }
                CurvatureKind::KfacLastLayer => unreachable!("rejected above"),
            }
        }
    };
    Ok(CurvatureFit { subset, curvature })
}
