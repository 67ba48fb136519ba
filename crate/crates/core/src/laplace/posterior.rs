use super::curvature::{Curvature, CurvatureFit, Subset};
use crate::error::{Error, Result};
use crate::numerics::{cholesky, solve_lower, solve_lower_t, symmetric_eigen, Matrix, Rng, JITTER_SCALES};

/// Gaussian `N(θ_MAP, (H + λI)⁻¹)` over a parameter subset.
#[derive(Debug, Clone)]
pub struct LaplacePosterior {
    pub subset: Subset,
    pub mean: Vec<f64>,
    pub prior_precision: f64,
    repr: Repr,
}

#[derive(Debug, Clone)]
enum Repr {
    /// Cholesky factor of the precision `H + λI`.
    Full { chol: Matrix },
    Diag { variance: Vec<f64> },
    /// Eigenbases of the Kronecker factors and the spectrum of
    /// `G ⊗ A + λI`, stored as `1 / (g_p a_q + λ)` in a `k x (n+1)` grid.
    Kron { g_vecs: Matrix, a_vecs: Matrix, inv_spectrum: Matrix },
}

/// Applies the jitter policy to a positive diagonal.
fn positive_diagonal(d: Vec<f64>) -> Result<Vec<f64>> {
    let bad = |d: &[f64]| d.iter().position(|&v| !(v > 0.0) || !v.is_finite());
    let Some(mut idx) = bad(&d) else { return Ok(d) };
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    for s in JITTER_SCALES {
        let j = s * mean.abs();
        let shifted: Vec<f64> = d.iter().map(|v| v + j).collect();
        match bad(&shifted) {
            None => return Ok(shifted),
            Some(i) => idx = i,
        }
    }
    Err(Error::NotPositiveDefinite { index: idx, pivot: d[idx] })
}

/// Combines data-term curvature with the prior precision `λ`.
///
/// For Kronecker factors the damping is exact: with `G = U diag(g) Uᵀ` and
/// `A = V diag(a) Vᵀ`, `(G ⊗ A + λI)⁻¹ = (U ⊗ V) diag(1 / (g ⊗ a + λ)) (U ⊗ V)ᵀ`.
pub fn build_posterior(fit: &CurvatureFit, mean: Vec<f64>, prior_precision: f64) -> Result<LaplacePosterior> {
    if !(prior_precision >= 0.0) || !prior_precision.is_finite() {
        return Err(Error::invalid(format!("prior precision must be a finite non-negative number, got {prior_precision}")));
    }
    if mean.len() != fit.curvature.dim() {
        return Err(Error::dims(format!("mean of length {} for curvature of dimension {}", mean.len(), fit.curvature.dim())));
    }
    let repr = match &fit.curvature {
        Curvature::Full(h) => {
            let mut p = h.clone();
            p.add_diag(prior_precision);
            Repr::Full { chol: cholesky(&p)? }
        }
        Curvature::Diag(h) => {
            let prec = positive_diagonal(h.iter().map(|v| v + prior_precision).collect())?;
            Repr::Diag { variance: prec.into_iter().map(|v| 1.0 / v).collect() }
        }
        Curvature::Kron { g, a } => {
            let (gv, gu) = symmetric_eigen(g)?;
            let (av, au) = symmetric_eigen(a)?;
            // factors are PSD; clamp round-off negatives
            let spectrum: Vec<f64> =
                gv.iter().flat_map(|&x| av.iter().map(move |&y| x.max(0.0) * y.max(0.0) + prior_precision)).collect();
            let spectrum = positive_diagonal(spectrum)?;
            let inv = Matrix::from_vec(gv.len(), av.len(), spectrum.into_iter().map(|v| 1.0 / v).collect())?;
            Repr::Kron { g_vecs: gu, a_vecs: au, inv_spectrum: inv }
        }
    };
    Ok(LaplacePosterior { subset: fit.subset, mean, prior_precision, repr })
}

impl LaplacePosterior {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn kind_name(&self) -> &'static str {
        match self.repr {
            Repr::Full { .. } => "full_ggn",
            Repr::Diag { .. } => "diag_ggn",
            Repr::Kron { .. } => "kfac_last_layer",
        }
    }

    /// `gᵀ Σ g`.
    pub fn quad_form(&self, g: &[f64]) -> f64 {
        debug_assert_eq!(g.len(), self.dim());
        match &self.repr {
            Repr::Full { chol } => {
                let y = solve_lower(chol, g);
                y.iter().map(|v| v * v).sum()
            }
            Repr::Diag { variance } => g.iter().zip(variance).map(|(gi, s)| gi * gi * s).sum(),
            Repr::Kron { g_vecs, a_vecs, inv_spectrum } => {
                let x = Matrix::from_vec(g_vecs.rows(), a_vecs.rows(), g.to_vec()).expect("dimension checked");
                let y = g_vecs.transpose().matmul(&x).and_then(|t| t.matmul(a_vecs)).expect("shapes");
                y.as_slice().iter().zip(inv_spectrum.as_slice()).map(|(v, s)| v * v * s).sum()
            }
        }
    }

    /// Quadratic form for a last-layer gradient `e_i ⊗ [h, 1]`, i.e. the
    /// linearized variance of output `i` given bias-augmented features.
    pub fn last_layer_output_variance(&self, output: usize, features: &[f64]) -> f64 {
        let p = features.len();
        match &self.repr {
            Repr::Diag { variance } => {
                features.iter().zip(&variance[output * p..(output + 1) * p]).map(|(f, s)| f * f * s).sum()
            }
            Repr::Kron { g_vecs, a_vecs, inv_spectrum } => {
                let z = a_vecs.t_matvec(features).expect("feature width");
                let mut v = 0.0;
                for pi in 0..g_vecs.cols() {
                    let u = g_vecs[(output, pi)];
                    let row = inv_spectrum.row(pi);
                    v += u * u * z.iter().zip(row).map(|(zq, s)| zq * zq * s).sum::<f64>();
                }
                v
            }
            Repr::Full { .. } => {
                let mut g = vec![0.0; self.dim()];
                g[output * p..(output + 1) * p].copy_from_slice(features);
                self.quad_form(&g)
            }
        }
    }

    /// Diagonal of `Σ`.
    pub fn marginal_variances(&self) -> Vec<f64> {
        match &self.repr {
            Repr::Full { chol } => {
                // Σ = L⁻ᵀ L⁻¹, so Σᵢᵢ is the squared norm of column i of L⁻¹
                let n = chol.rows();
                (0..n)
                    .map(|i| {
                        let mut e = vec![0.0; n];
                        e[i] = 1.0;
                        solve_lower(chol, &e).iter().map(|c| c * c).sum()
                    })
                    .collect()
            }
            Repr::Diag { variance } => variance.clone(),
            Repr::Kron { g_vecs, a_vecs, inv_spectrum } => {
                let (k, p) = inv_spectrum.shape();
                let mut out = Vec::with_capacity(k * p);
                for i in 0..k {
                    for j in 0..p {
                        let mut s = 0.0;
                        for pi in 0..k {
                            let u = g_vecs[(i, pi)] * g_vecs[(i, pi)];
                            for q in 0..p {
                                s += u * a_vecs[(j, q)] * a_vecs[(j, q)] * inv_spectrum[(pi, q)];
                            }
                        }
                        out.push(s);
                    }
                }
                out
            }
        }
    }

    /// Dense `Σ`. Intended for small problems and tests.
    pub fn covariance(&self) -> Matrix {
        let n = self.dim();
        match &self.repr {
            Repr::Diag { variance } => Matrix::from_diag(variance),
            _ => {
                let mut cov = Matrix::zeros(n, n);
                for j in 0..n {
                    let mut e = vec![0.0; n];
                    e[j] = 1.0;
                    let col = self.cov_times(&e);
                    for (i, v) in col.into_iter().enumerate() {
                        cov[(i, j)] = v;
                    }
                }
                cov
            }
        }
    }

    fn cov_times(&self, v: &[f64]) -> Vec<f64> {
        match &self.repr {
            Repr::Full { chol } => solve_lower_t(chol, &solve_lower(chol, v)),
            Repr::Diag { variance } => v.iter().zip(variance).map(|(a, b)| a * b).collect(),
            Repr::Kron { g_vecs, a_vecs, inv_spectrum } => {
                let x = Matrix::from_vec(g_vecs.rows(), a_vecs.rows(), v.to_vec()).expect("dimension");
                let y = g_vecs.transpose().matmul(&x).and_then(|t| t.matmul(a_vecs)).expect("shapes");
                let y = Matrix::from_fn(y.rows(), y.cols(), |i, j| y[(i, j)] * inv_spectrum[(i, j)]);
                g_vecs.matmul(&y).and_then(|t| t.matmul_t(a_vecs)).expect("shapes").into_vec()
            }
        }
    }

    /// Draws `count` parameter vectors from the posterior.
    ///
    /// Full: `θ = μ + L⁻ᵀ z` with `L Lᵀ` the precision. Kronecker: the
    /// matrix-normal form `θ = μ + vec(U (Z ⊙ S) Vᵀ)` with `S` the square
    /// root of the inverse spectrum, which has covariance exactly
    /// `(G ⊗ A + λI)⁻¹`.
    pub fn sample(&self, rng: &mut Rng, count: usize) -> Vec<Vec<f64>> {
        (0..count).map(|_| self.sample_one(rng)).collect()
    }

    pub fn sample_one(&self, rng: &mut Rng) -> Vec<f64> {
        let n = self.dim();
        let z = rng.normal_vec(n);
        let delta = match &self.repr {
            Repr::Full { chol } => solve_lower_t(chol, &z),
            Repr::Diag { variance } => z.iter().zip(variance).map(|(zi, s)| zi * s.sqrt()).collect(),
            Repr::Kron { g_vecs, a_vecs, inv_spectrum } => {
                let y = Matrix::from_fn(inv_spectrum.rows(), inv_spectrum.cols(), |i, j| {
                    z[i * inv_spectrum.cols() + j] * inv_spectrum[(i, j)].sqrt()
                });
                g_vecs.matmul(&y).and_then(|t| t.matmul_t(a_vecs)).expect("shapes").into_vec()
            }
        };
        delta.into_iter().zip(&self.mean).map(|(d, m)| d + m).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{inverse_psd, kron};

    fn fit(c: Curvature) -> CurvatureFit {
        CurvatureFit { subset: Subset::LastLayer, curvature: c }
    }

    fn rel_frob(a: &Matrix, b: &Matrix) -> f64 {
        a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm()
    }

    fn random_psd(rng: &mut Rng, n: usize, rank: usize) -> Matrix {
        let b = Matrix::from_fn(n, rank, |_, _| rng.normal());
        b.matmul_t(&b).unwrap()
    }

    #[test]
    fn prior_only_and_unit_curvature() {
        for c in [Curvature::Full(Matrix::zeros(3, 3)), Curvature::Diag(vec![0.0; 3])] {
            let p = build_posterior(&fit(c), vec![0.0; 3], 2.0).unwrap();
            assert!(rel_frob(&p.covariance(), &Matrix::identity(3).scale(0.5)) < 1e-15);
        }
        for c in [Curvature::Full(Matrix::identity(3)), Curvature::Diag(vec![1.0; 3])] {
            let p = build_posterior(&fit(c), vec![0.0; 3], 1.0).unwrap();
            assert!(rel_frob(&p.covariance(), &Matrix::identity(3).scale(0.5)) < 1e-15);
        }
    }

    #[test]
    fn kron_marginals_match_dense_inverse() {
        let mut rng = Rng::new(21);
        let g = random_psd(&mut rng, 3, 3);
        let a = random_psd(&mut rng, 5, 3);
        let lambda = 0.7;
        let mut dense = kron(&g, &a);
        dense.add_diag(lambda);
        let oracle = inverse_psd(&dense).unwrap();
        let post = build_posterior(&fit(Curvature::Kron { g, a }), vec![0.0; 15], lambda).unwrap();
        for (m, o) in post.marginal_variances().iter().zip(oracle.diag()) {
            assert!((m - o).abs() < 1e-10 * o.abs().max(1.0));
        }
        assert!(rel_frob(&post.covariance(), &oracle) < 1e-10);
        let g: Vec<f64> = (0..15).map(|i| (i as f64 * 0.3).sin()).collect();
        let exact = crate::numerics::dot(&g, &oracle.matvec(&g).unwrap());
        assert!((post.quad_form(&g) - exact).abs() < 1e-10 * exact);
    }

    #[test]
    fn full_quad_form_and_marginals() {
        let mut rng = Rng::new(5);
        let h = random_psd(&mut rng, 6, 4);
        let post = build_posterior(&fit(Curvature::Full(h.clone())), vec![0.0; 6], 0.3).unwrap();
        let mut p = h;
        p.add_diag(0.3);
        let oracle = inverse_psd(&p).unwrap();
        for (m, o) in post.marginal_variances().iter().zip(oracle.diag()) {
            assert!((m - o).abs() < 1e-10 * o);
        }
        let g = [1.0, -2.0, 0.5, 0.0, 3.0, 1.0];
        let exact = crate::numerics::dot(&g, &oracle.matvec(&g).unwrap());
        assert!((post.quad_form(&g) - exact).abs() < 1e-10 * exact);
    }

    #[test]
    fn last_layer_output_variance_matches_quad_form() {
        let mut rng = Rng::new(6);
        let g = random_psd(&mut rng, 2, 2);
        let a = random_psd(&mut rng, 4, 4);
        let mut dense = kron(&g, &a);
        let features = [0.5, -1.0, 2.0, 1.0];
        for c in [Curvature::Kron { g: g.clone(), a: a.clone() }, Curvature::Full(dense.clone()), Curvature::Diag(dense.diag())] {
            let post = build_posterior(&fit(c), vec![0.0; 8], 0.5).unwrap();
            for out in 0..2 {
                let mut gvec = vec![0.0; 8];
                gvec[out * 4..out * 4 + 4].copy_from_slice(&features);
                let a = post.last_layer_output_variance(out, &features);
                let b = post.quad_form(&gvec);
                assert!((a - b).abs() < 1e-12 * b.max(1.0));
            }
        }
        dense.add_diag(1.0);
    }

    #[test]
    fn variances_shrink_with_prior_precision() {
        let mut rng = Rng::new(7);
        let h = random_psd(&mut rng, 4, 2);
        let g = random_psd(&mut rng, 2, 2);
        let a = random_psd(&mut rng, 2, 1);
        let fits = [fit(Curvature::Full(h.clone())), fit(Curvature::Diag(h.diag())), fit(Curvature::Kron { g, a })];
        for f in &fits {
            let mut prev: Option<Vec<f64>> = None;
            for i in 0..17 {
                let lambda = 10f64.powf(-4.0 + 0.5 * i as f64);
                let v = build_posterior(f, vec![0.0; 4], lambda).unwrap().marginal_variances();
                if let Some(p) = &prev {
                    for (a, b) in v.iter().zip(p) {
                        assert!(a <= b, "{a} > {b}");
                    }
                }
                prev = Some(v);
            }
        }
    }

    #[test]
    fn huge_prior_collapses_samples() {
        let post = build_posterior(&fit(Curvature::Diag(vec![1.0; 4])), vec![1.0, 2.0, 3.0, 4.0], 1e12).unwrap();
        for s in post.sample(&mut Rng::new(0), 20) {
            for (a, b) in s.iter().zip(&post.mean) {
                assert!((a - b).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn full_sample_covariance() {
        let mut rng = Rng::new(9);
        let h = random_psd(&mut rng, 3, 3);
        let post = build_posterior(&fit(Curvature::Full(h)), vec![0.0; 3], 1.0).unwrap();
        let n = 10_000;
        let samples = post.sample(&mut Rng::new(10), n);
        let mut emp = Matrix::zeros(3, 3);
        for s in &samples {
            emp.add_outer(1.0 / n as f64, s, s);
        }
        assert!(rel_frob(&emp, &post.covariance()) < 0.10);
        let again = post.sample(&mut Rng::new(10), n);
        assert_eq!(samples, again);
    }

    #[test]
    fn rejects_bad_inputs() {
        let f = fit(Curvature::Diag(vec![0.0; 2]));
        assert!(build_posterior(&f, vec![0.0; 3], 1.0).is_err());
        assert!(build_posterior(&f, vec![0.0; 2], -1.0).is_err());
        assert!(matches!(build_posterior(&f, vec![0.0; 2], 0.0), Err(Error::NotPositiveDefinite { .. })));
        let indefinite = fit(Curvature::Full(Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap()));
        assert!(matches!(build_posterior(&indefinite, vec![0.0; 2], 0.0), Err(Error::NotPositiveDefinite { .. })));
    }
}
