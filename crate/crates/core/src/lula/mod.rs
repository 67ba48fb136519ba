//! LULA units: extra hidden units whose outgoing weights are zero.
//!
//! [`augment`] grows the hidden layers without changing the function the
//! network computes. [`train_lula`] then tunes only the incoming weights and
//! biases of the new units so that, under a last-layer Laplace posterior,
//! the output variance is small on inliers and large on outliers.

mod augment;
mod objective;
mod train;

pub use augment::{augment, penultimate_counts, InitStd, LayerMask, LulaAugmentation, MASK_FORMAT_VERSION};
pub use objective::{
    analytic_gradient, last_layer_posterior, lula_objective, objective_at, total_variance, ObjectiveData, VarianceConfig,
    VarianceEvaluator,
};
pub use train::{
    best_units, finite_difference_gradient, grid_search_units, train_lula, GradientMethod, GridConfig, GridResult, GridScore,
    LulaData, LulaOutcome, LulaTrainConfig,
};
