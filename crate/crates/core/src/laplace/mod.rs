//! Laplace approximations around a trained network.
//!
//! The curvature is always the generalized Gauss-Newton matrix, never the
//! raw Hessian, so the posterior precision `H + λI` is positive definite
//! whenever `λ > 0`.

mod curvature;
mod posterior;
mod predict;
mod tuning;

pub use curvature::{
    fit_curvature, last_layer_features, last_layer_params, set_last_layer_params, set_subset_params, subset_dim,
    subset_params, Curvature, CurvatureFit, CurvatureKind, Subset, DEFAULT_FULL_CAP,
};
pub use posterior::{build_posterior, LaplacePosterior};
pub use predict::{
    linearized_predict, linearized_variance, linearized_variances, map_predict, mc_output_moments, mc_predict, predict,
    probit_predict_binary, PredictConfig, PredictMethod, Predictive,
};
pub use tuning::{
    best_candidate, default_lambda_grid, predictive_log_likelihood, tune_prior_precision, Candidate, TuningObjective,
    TuningResult,
};
