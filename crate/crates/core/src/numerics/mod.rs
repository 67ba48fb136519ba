//! Dense linear algebra, Kronecker utilities and seeded sampling.
//!
//! Everything is `f64`. Matrices are row-major.

mod linalg;
mod matrix;
mod random;

pub use linalg::{
    cholesky, inverse_psd, kron, lower_matvec, solve_lower, solve_lower_t, solve_psd, symmetric_eigen, JITTER_SCALES,
};
pub use matrix::{axpy, dot, Matrix};
pub use random::{sample_gaussian, Rng};
