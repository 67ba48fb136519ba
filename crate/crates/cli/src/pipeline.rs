//! Shared steps: data preparation, model construction, posterior fitting and
//! outlier sets.

use lula_core::data::{
    gen_toy_regression, gen_two_moons, gen_uniform_noise, load_csv, ring_points, split, standardize, synthesize_ood,
    synthesize_ood_set, Dataset, OodKind, Standardization, TargetColumn, Targets,
};
use lula_core::laplace::{
    build_posterior, fit_curvature, subset_params, tune_prior_precision, LaplacePosterior, TuningResult,
};
use lula_core::network::Network;
use lula_core::training::LossKind;
use lula_core::{Matrix, Rng};

use crate::config::{DataSource, EvalSet, ExperimentConfig, OutlierSource};
use crate::{CliError, Result};

/// Offsets that keep the seeds of derived random streams apart.
const TUNING_OUTLIER_STREAM: u64 = 0x5eed_0001;
const LULA_OUTLIER_STREAM: u64 = 0x5eed_0100;
const EVAL_STREAM: u64 = 0x5eed_0200;

#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub loss: LossKind,
    pub stats: Option<Standardization>,
}

impl Prepared {
    pub fn n_features(&self) -> usize {
        self.train.n_features()
    }
}

fn raw_data(cfg: &ExperimentConfig) -> Result<Dataset> {
    let d = &cfg.data;
    Ok(match d.source {
        DataSource::TwoMoons => gen_two_moons(d.samples, d.noise, d.seed)?,
        DataSource::ToyRegression => gen_toy_regression(d.samples, (d.x_range[0], d.x_range[1]), d.noise, d.seed)?,
        DataSource::Csv => {
            let path = d.path.as_ref().ok_or_else(|| CliError::Config("[data] source = \"csv\" needs `path`".into()))?;
            let target = match d.target.as_deref() {
                None => return Err(CliError::Config("[data] source = \"csv\" needs `target`".into())),
                Some(t) => match t.parse::<usize>() {
                    Ok(i) => TargetColumn::Index(i),
                    Err(_) => TargetColumn::Name(t.to_string()),
                },
            };
            load_csv(path, &target, d.header)?
        }
    })
}

/// Likelihood from the config, or the default for the target type.
pub fn loss_for(cfg: &ExperimentConfig, data: &Dataset) -> LossKind {
    cfg.model.loss.unwrap_or(match data.targets {
        Targets::Labels { .. } => LossKind::CategoricalCe,
        _ => LossKind::GaussianNll { beta: 100.0 },
    })
}

/// Generates or loads the data, splits it and optionally standardizes it.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<Prepared> {
    let raw = raw_data(cfg)?;
    let loss = loss_for(cfg, &raw);
    let (train, val, test) = split(&raw, &cfg.data.split)?;
    if train.is_empty() {
        return Err(CliError::Config("[data] the training split is empty".into()));
    }
    let (train, val, test, stats) = if cfg.data.standardize {
        let (train, mut rest, stats) = standardize(&train, &[val, test])?;
        let test = rest.pop().expect("two sets");
        let val = rest.pop().expect("two sets");
        (train, val, test, Some(stats))
    } else {
        (train, val, test, None)
    };
    Ok(Prepared { train, val, test, loss, stats })
}

/// Output width implied by the targets and likelihood.
pub fn output_dim(data: &Dataset, loss: &LossKind) -> Result<usize> {
    match (&data.targets, loss) {
        (Targets::Labels { .. }, LossKind::BinaryCe) => Ok(1),
        (Targets::Labels { classes, .. }, _) => Ok(*classes),
        (Targets::Values(v), _) => Ok(v.cols()),
        (Targets::None, _) => Err(CliError::Config("[data] the dataset has no targets".into())),
    }
}

pub fn layer_widths(cfg: &ExperimentConfig, n_in: usize, n_out: usize) -> Vec<usize> {
    std::iter::once(n_in).chain(cfg.model.hidden.iter().copied()).chain(std::iter::once(n_out)).collect()
}

pub fn fresh_network(cfg: &ExperimentConfig, data: &Prepared) -> Result<Network> {
    let widths = layer_widths(cfg, data.n_features(), output_dim(&data.train, &data.loss)?);
    Ok(Network::random(&Network::mlp_specs(&widths, cfg.model.activation), &mut Rng::new(cfg.model.seed))?)
}

/// Checks that a loaded model fits the prepared data.
pub fn check_model(net: &Network, data: &Prepared) -> Result<()> {
    let n_out = output_dim(&data.train, &data.loss)?;
    if net.input_dim() != data.n_features() || net.output_dim() != n_out {
        return Err(CliError::Config(format!(
            "model maps {} inputs to {} outputs but the data has {} features and {} targets",
            net.input_dim(),
            net.output_dim(),
            data.n_features(),
            n_out
        )));
    }
    Ok(())
}

/// Prior precision used when no tuning happens.
pub fn base_lambda(cfg: &ExperimentConfig) -> f64 {
    cfg.laplace.prior_precision.unwrap_or(cfg.train.weight_decay)
}

/// Uniform outliers used by the confidence-based tuning objective.
pub fn tuning_outliers(cfg: &ExperimentConfig, n: usize) -> Result<Dataset> {
    let e = &cfg.eval;
    Ok(gen_uniform_noise(e.outlier_count, n, e.outlier_low, e.outlier_high, cfg.data.seed ^ TUNING_OUTLIER_STREAM, 1.0)?)
}

#[derive(Debug, Clone)]
pub struct FittedLaplace {
    pub posterior: LaplacePosterior,
    pub tuning: Option<TuningResult>,
}

/// Fits the configured curvature on the training inputs and picks `λ`.
pub fn fit_laplace(cfg: &ExperimentConfig, net: &Network, data: &Prepared) -> Result<FittedLaplace> {
    let l = &cfg.laplace;
    let fit = fit_curvature(net, &data.train.features, &data.loss, l.curvature, l.subset, l.full_cap)?;
    let mean = subset_params(net, l.subset);
    let tuning = match l.tuning.objective() {
        None => None,
        Some(objective) => {
            if data.val.is_empty() {
                return Err(CliError::Config("[laplace] tuning needs a nonempty validation split".into()));
            }
            let ood = tuning_outliers(cfg, data.n_features())?;
            Some(tune_prior_precision(net, &fit, &mean, &data.loss, &data.val, Some(&ood), objective, &l.grid, &l.predict)?)
        }
    };
    let lambda = tuning.as_ref().map_or_else(|| base_lambda(cfg), |t| t.lambda);
    let posterior = build_posterior(&fit, mean, lambda)?;
    Ok(FittedLaplace { posterior, tuning })
}

/// Outliers for the LULA objective. `stream` 0 is used for training and 1
/// for the held-out set of the unit-count search.
pub fn lula_outliers(cfg: &ExperimentConfig, inliers: &Dataset, stream: u64) -> Result<Matrix> {
    let u = &cfg.lula;
    let seed = cfg.lula.train.seed ^ (LULA_OUTLIER_STREAM + stream);
    Ok(match u.outliers {
        OutlierSource::Uniform => {
            gen_uniform_noise(u.outlier_count, inliers.n_features(), u.outlier_low, u.outlier_high, seed, 1.0)?.features
        }
        OutlierSource::Synthetic => {
            let mut rng = Rng::new(seed);
            let set = synthesize_ood_set(inliers, &[OodKind::Permute, OodKind::Blur, OodKind::Contrast], &mut rng)?;
            set.features
        }
    })
}

/// One evaluation outlier set for the given repeat.
pub fn eval_set(cfg: &ExperimentConfig, kind: EvalSet, test: &Dataset, repeat: u64) -> Result<Matrix> {
    let e = &cfg.eval;
    let seed = (e.predict.seed.wrapping_add(repeat)) ^ EVAL_STREAM;
    let n = test.n_features();
    let m = e.outlier_count;
    Ok(match kind {
        EvalSet::Uniform => gen_uniform_noise(m, n, e.outlier_low, e.outlier_high, seed, 1.0)?.features,
        EvalSet::Asymptotic => gen_uniform_noise(m, n, 0.0, 1.0, seed, 5000.0)?.features,
        EvalSet::FarRing => ring_points(m, n, 8.0, 12.0, seed)?.features,
        other => {
            if test.is_empty() {
                return Err(CliError::Config(format!("[eval] the {} set needs a nonempty test split", other.name())));
            }
            let kind = other.ood_kind().expect("synthetic kind");
            synthesize_ood(test, kind, &mut Rng::new(seed))?.features
        }
    })
}
