use super::matrix::{dot, Matrix};
use crate::error::{Error, Result};

/// Relative jitter scales tried, in order, when a plain factorization fails.
pub const JITTER_SCALES: [f64; 2] = [1e-8, 1e-6];

const SYMMETRY_TOL: f64 = 1e-10;

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = a`.
///
/// If the plain factorization hits a non-positive pivot, `s * mean(diag(a)) * I`
/// is added for each `s` in [`JITTER_SCALES`] before giving up.
pub fn cholesky(a: &Matrix) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::dims(format!("cholesky of a {}x{} matrix", a.rows(), a.cols())));
    }
    if !a.is_symmetric(SYMMETRY_TOL) {
        return Err(Error::invalid("cholesky input is not symmetric"));
    }
    let mut err = match cholesky_plain(a) {
        Ok(l) => return Ok(l),
        Err(e) => e,
    };
    let n = a.rows();
    let mean_diag = if n == 0 { 0.0 } else { a.diag().iter().sum::<f64>() / n as f64 };
    for scale in JITTER_SCALES {
        let jitter = scale * mean_diag.abs();
        if jitter == 0.0 {
            break;
        }
        let mut damped = a.clone();
        damped.add_diag(jitter);
        match cholesky_plain(&damped) {
            Ok(l) => {
                log::debug!("cholesky needed jitter {jitter:e}");
                return Ok(l);
            }
            Err(e) => err = e,
        }
    }
    Err(err)
}

fn cholesky_plain(a: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let pivot = a[(j, j)] - dot(&l.row(j)[..j], &l.row(j)[..j]);
        if !(pivot > 0.0) || !pivot.is_finite() {
            return Err(Error::NotPositiveDefinite { index: j, pivot });
        }
        let d = pivot.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let s = a[(i, j)] - dot(&l.row(i)[..j], &l.row(j)[..j]);
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Solves `L y = b` for lower-triangular `L`.
pub fn solve_lower(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut y = b.to_vec();
    for i in 0..n {
        let s = y[i] - dot(&l.row(i)[..i], &y[..i]);
        y[i] = s / l[(i, i)];
    }
    y
}

/// Solves `Lᵀ x = y` for lower-triangular `L`.
pub fn solve_lower_t(l: &Matrix, y: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut x = y.to_vec();
    for i in (0..n).rev() {
        let xi = x[i] / l[(i, i)];
        x[i] = xi;
        for k in 0..i {
            x[k] -= l[(i, k)] * xi;
        }
    }
    x
}

/// `L v` touching only the lower triangle.
pub fn lower_matvec(l: &Matrix, v: &[f64]) -> Vec<f64> {
    (0..l.rows()).map(|i| dot(&l.row(i)[..=i], &v[..=i])).collect()
}

/// Solves `a x = b` for symmetric positive-definite `a` via Cholesky.
pub fn solve_psd(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if b.rows() != a.rows() {
        return Err(Error::dims(format!("solve_psd with a {}x{} system and {} right-hand rows", a.rows(), a.cols(), b.rows())));
    }
    let l = cholesky(a)?;
    let mut x = Matrix::zeros(b.rows(), b.cols());
    for j in 0..b.cols() {
        let col = solve_lower_t(&l, &solve_lower(&l, &b.col_vec(j)));
        for (i, v) in col.into_iter().enumerate() {
            x[(i, j)] = v;
        }
    }
    Ok(x)
}

/// Inverse of a symmetric positive-definite matrix.
pub fn inverse_psd(a: &Matrix) -> Result<Matrix> {
    solve_psd(a, &Matrix::identity(a.rows()))
}

/// Kronecker product: entry `(i*b.rows + k, j*b.cols + l)` is `a[i,j] * b[k,l]`.
///
/// With the column-major vec convention, `(A ⊗ B) vec(X) = vec(B X Aᵀ)`.
/// With the row-major vec convention used for parameter flattening,
/// `(A ⊗ B) vec_r(X) = vec_r(A X Bᵀ)`.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (br, bc) = b.shape();
    Matrix::from_fn(a.rows() * br, a.cols() * bc, |r, c| a[(r / br, c / bc)] * b[(r % br, c % bc)])
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues and a matrix whose columns are the matching orthonormal
/// eigenvectors, so `a = V diag(w) Vᵀ`.
pub fn symmetric_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    if !a.is_square() {
        return Err(Error::dims(format!("eigendecomposition of a {}x{} matrix", a.rows(), a.cols())));
    }
    let n = a.rows();
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    let scale = m.frobenius_norm();
    if scale == 0.0 {
        return Ok((vec![0.0; n], v));
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..i {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    Ok((m.diag(), v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn random_pd(rng: &mut Rng, n: usize) -> Matrix {
        let b = Matrix::from_fn(n, n, |_, _| rng.normal());
        let mut a = b.matmul_t(&b).unwrap();
        a.add_diag(0.5);
        a
    }

    fn rel_frob(a: &Matrix, b: &Matrix) -> f64 {
        a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn cholesky_identity() {
        assert_eq!(cholesky(&Matrix::identity(3)).unwrap(), Matrix::identity(3));
    }

    #[test]
    fn cholesky_reconstructs_2x2() {
        let a = Matrix::from_rows(&[[4.0, 2.0], [2.0, 3.0]]).unwrap();
        let l = cholesky(&a).unwrap();
        assert_eq!(l[(0, 1)], 0.0);
        let r = l.matmul_t(&l).unwrap();
        for (x, y) in r.as_slice().iter().zip(a.as_slice()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn cholesky_indefinite_fails() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap();
        assert!(matches!(cholesky(&a), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn cholesky_jitter_rescues_singular_psd() {
        // rank one, PSD: plain Cholesky hits a zero pivot
        let a = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        let l = cholesky(&a).unwrap();
        assert!(rel_frob(&l.matmul_t(&l).unwrap(), &a) < 1e-6);
    }

    #[test]
    fn cholesky_rejects_asymmetric() {
        let a = Matrix::from_rows(&[[1.0, 0.5], [0.0, 1.0]]).unwrap();
        assert!(cholesky(&a).is_err());
    }

    #[test]
    fn solve_psd_examples() {
        let two_i = Matrix::identity(3).scale(2.0);
        let half = solve_psd(&two_i, &Matrix::identity(3)).unwrap();
        assert!(rel_frob(&half, &Matrix::identity(3).scale(0.5)) < 1e-15);

        let a = Matrix::from_rows(&[[4.0, 2.0], [2.0, 3.0]]).unwrap();
        let b = Matrix::column(&[1.0, 1.0]);
        let x = solve_psd(&a, &b).unwrap();
        let r = a.matmul(&x).unwrap();
        assert!(rel_frob(&r, &b) < 1e-12);

        let b = Matrix::from_rows(&[[1.5, -2.0], [0.25, 7.0]]).unwrap();
        assert_eq!(solve_psd(&Matrix::identity(2), &b).unwrap(), b);
    }

    #[test]
    fn solve_psd_recovers_x_on_random_systems() {
        let mut rng = Rng::new(1234);
        for trial in 0..100 {
            let n = 1 + trial % 20;
            let a = random_pd(&mut rng, n);
            let x = Matrix::from_fn(n, 2, |_, _| rng.normal());
            let b = a.matmul(&x).unwrap();
            let got = solve_psd(&a, &b).unwrap();
            assert!(rel_frob(&got, &x) < 1e-8, "trial {trial}");
        }
    }

    #[test]
    fn kron_examples() {
        assert_eq!(kron(&Matrix::identity(2), &Matrix::identity(2)), Matrix::identity(4));
        let a = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let b = Matrix::from_rows(&[[3.0], [4.0]]).unwrap();
        assert_eq!(kron(&a, &b), Matrix::from_rows(&[[3.0, 6.0], [4.0, 8.0]]).unwrap());
        assert_eq!(kron(&Matrix::zeros(2, 3), &Matrix::zeros(4, 5)).shape(), (8, 15));
    }

    fn vec_col(x: &Matrix) -> Vec<f64> {
        x.transpose().into_vec()
    }

    #[test]
    fn kron_vec_identity() {
        let mut rng = Rng::new(77);
        for _ in 0..20 {
            let a = Matrix::from_fn(3, 3, |_, _| rng.normal());
            let b = Matrix::from_fn(3, 3, |_, _| rng.normal());
            let x = Matrix::from_fn(3, 3, |_, _| rng.normal());
            let lhs = kron(&a, &b).matvec(&vec_col(&x)).unwrap();
            let rhs = vec_col(&b.matmul(&x).unwrap().matmul_t(&a).unwrap());
            for (l, r) in lhs.iter().zip(&rhs) {
                assert!((l - r).abs() <= 1e-12 * (1.0 + r.abs()));
            }
        }
    }

    #[test]
    fn eigen_reconstructs() {
        let mut rng = Rng::new(8);
        for n in [1, 2, 5, 9] {
            let a = random_pd(&mut rng, n);
            let (w, v) = symmetric_eigen(&a).unwrap();
            let rec = v.matmul(&Matrix::from_diag(&w)).unwrap().matmul_t(&v).unwrap();
            assert!(rel_frob(&rec, &a) < 1e-12);
            let vtv = v.transpose().matmul(&v).unwrap();
            assert!(rel_frob(&vtv, &Matrix::identity(n)) < 1e-12);
        }
    }

    #[test]
    fn triangular_solves() {
        let mut rng = Rng::new(2);
        let a = random_pd(&mut rng, 6);
        let l = cholesky(&a).unwrap();
        let b: Vec<f64> = (0..6).map(|i| i as f64 - 2.0).collect();
        let y = solve_lower(&l, &b);
        let back = lower_matvec(&l, &y);
        for (u, v) in back.iter().zip(&b) {
            assert!((u - v).abs() < 1e-10);
        }
        let x = solve_lower_t(&l, &b);
        let back = l.t_matvec(&x).unwrap();
        for (u, v) in back.iter().zip(&b) {
            assert!((u - v).abs() < 1e-10);
        }
    }
}
