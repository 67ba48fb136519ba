//! Experiment configuration, read from TOML.
//!
//! Every section and key is optional; missing keys take the values printed
//! by `lula-lab defaults`. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use lula_core::data::{OodKind, SplitSpec};
use lula_core::laplace::{default_lambda_grid, CurvatureKind, PredictConfig, Subset, TuningObjective, DEFAULT_FULL_CAP};
use lula_core::lula::LulaTrainConfig;
use lula_core::network::Activation;
use lula_core::training::{LossKind, TrainConfig};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    TwoMoons,
    ToyRegression,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Points generated before splitting (generators only).
    pub samples: usize,
    pub noise: f64,
    /// Input range of the regression toy.
    pub x_range: [f64; 2],
    /// CSV file, relative paths resolved against the config file.
    pub path: Option<PathBuf>,
    /// Target column name (needs a header) or zero-based index.
    pub target: Option<String>,
    pub header: bool,
    pub split: SplitSpec,
    /// Standardize features with training statistics.
    pub standardize: bool,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::TwoMoons,
            samples: 500,
            noise: 0.1,
            x_range: [-4.0, 4.0],
            path: None,
            target: None,
            header: true,
            split: SplitSpec::default(),
            standardize: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden layer widths.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Likelihood. `None` picks categorical cross-entropy for labelled data
    /// and a Gaussian with `beta = 100` for regression.
    pub loss: Option<LossKind>,
    /// Seed for the initial weights.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden: vec![64, 64], activation: Activation::Relu, loss: None, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tuning {
    /// Use `prior_precision` as given.
    None,
    ValLogLikelihood,
    OodMmc,
}

impl Tuning {
    pub fn objective(self) -> Option<TuningObjective> {
        match self {
            Tuning::None => None,
            Tuning::ValLogLikelihood => Some(TuningObjective::ValLogLikelihood),
            Tuning::OodMmc => Some(TuningObjective::OodMmc),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LaplaceConfig {
    pub curvature: CurvatureKind,
    pub subset: Subset,
    /// Prior precision; also the fallback when tuning is off. `None` reuses
    /// the training weight decay.
    pub prior_precision: Option<f64>,
    pub tuning: Tuning,
    pub grid: Vec<f64>,
    pub full_cap: usize,
    pub predict: PredictConfig,
}

impl Default for LaplaceConfig {
    fn default() -> Self {
        Self {
            curvature: CurvatureKind::KfacLastLayer,
            subset: Subset::LastLayer,
            prior_precision: None,
            tuning: Tuning::None,
            grid: default_lambda_grid(),
            full_cap: DEFAULT_FULL_CAP,
            predict: PredictConfig { samples: 100, ..PredictConfig::default() },
        }
    }
}

/// Where LULA's outliers come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutlierSource {
    /// Permuted, blurred and contrast-scaled copies of the inliers.
    Synthetic,
    /// Uniform noise in `[low, high]` per feature.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LulaConfig {
    /// Units added to the last hidden layer. Ignored when `counts` or
    /// `grid` is set.
    pub units: usize,
    /// Units per hidden layer, input side first.
    pub counts: Option<Vec<usize>>,
    /// Candidate unit counts for the last hidden layer; enables the search.
    pub grid: Option<Vec<usize>>,
    /// Initial standard deviation of the free weights is
    /// `init_scale * sqrt(2 / fan_in)`.
    pub init_scale: f64,
    /// Inliers for the objective: the training set (`false`) or the
    /// validation set (`true`).
    pub use_validation: bool,
    pub outliers: OutlierSource,
    pub outlier_count: usize,
    pub outlier_low: f64,
    pub outlier_high: f64,
    pub train: LulaTrainConfig,
}

impl Default for LulaConfig {
    fn default() -> Self {
        Self {
            units: 64,
            counts: None,
            grid: None,
            init_scale: 0.1,
            use_validation: false,
            outliers: OutlierSource::Uniform,
            outlier_count: 500,
            outlier_low: -10.0,
            outlier_high: 10.0,
            train: LulaTrainConfig { epochs: 100, learning_rate: 0.1, ..LulaTrainConfig::default() },
        }
    }
}

/// Evaluation-time outlier sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSet {
    Permute,
    Blur,
    Contrast,
    /// Uniform noise in `[outlier_low, outlier_high]`.
    Uniform,
    /// Uniform noise in `[0, 1]` scaled by 5000.
    Asymptotic,
    /// Points at distance 8 to 12 from the origin.
    FarRing,
}

impl EvalSet {
    pub fn name(self) -> &'static str {
        match self {
            EvalSet::Permute => "permute",
            EvalSet::Blur => "blur",
            EvalSet::Contrast => "contrast",
            EvalSet::Uniform => "uniform",
            EvalSet::Asymptotic => "asymptotic",
            EvalSet::FarRing => "far_ring",
        }
    }

    pub fn ood_kind(self) -> Option<OodKind> {
        match self {
            EvalSet::Permute => Some(OodKind::Permute),
            EvalSet::Blur => Some(OodKind::Blur),
            EvalSet::Contrast => Some(OodKind::Contrast),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub sets: Vec<EvalSet>,
    /// Points per generated outlier set.
    pub outlier_count: usize,
    pub outlier_low: f64,
    pub outlier_high: f64,
    /// Prediction runs with different seeds; metrics report mean and std.
    pub repeats: usize,
    pub predict: PredictConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            sets: vec![EvalSet::Uniform, EvalSet::Asymptotic, EvalSet::FarRing],
            outlier_count: 500,
            outlier_low: -10.0,
            outlier_high: 10.0,
            repeats: 10,
            predict: PredictConfig { samples: 100, ..PredictConfig::default() },
        }
    }
}

/// Settings for `demo-toy`, which generates its own data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    pub moons_samples: usize,
    pub moons_noise: f64,
    pub regression_samples: usize,
    pub regression_noise: f64,
    /// Lattice points per axis for the two-moons grid.
    pub grid_points: usize,
    /// Half-width of the square two-moons lattice.
    pub grid_extent: f64,
    /// Points on the regression grid.
    pub line_points: usize,
    /// Half-width of the regression grid.
    pub line_extent: f64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            moons_samples: 500,
            moons_noise: 0.1,
            regression_samples: 150,
            regression_noise: 0.1,
            grid_points: 61,
            grid_extent: 12.0,
            line_points: 241,
            line_extent: 12.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub laplace: LaplaceConfig,
    pub lula: LulaConfig,
    pub eval: EvalConfig,
    pub demo: DemoConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig { learning_rate: 1e-2, epochs: 100, batch_size: 32, weight_decay: 1.0, ..TrainConfig::default() },
            laplace: LaplaceConfig::default(),
            lula: LulaConfig::default(),
            eval: EvalConfig::default(),
            demo: DemoConfig::default(),
        }
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative data paths are resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let (Some(p), Some(dir)) = (cfg.data.path.as_mut(), path.parent()) {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Replaces every seed in the file.
    pub fn override_seed(&mut self, seed: u64) {
        self.data.seed = seed;
        self.data.split.seed = seed;
        self.model.seed = seed;
        self.train.seed = seed;
        self.lula.train.seed = seed;
        self.laplace.predict.seed = seed;
        self.eval.predict.seed = seed;
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let wrap = |section: &str, e: lula_core::Error| config_err(format!("[{section}] {e}"));
        let d = &self.data;
        if d.source == DataSource::Csv && d.path.is_none() {
            return Err(config_err("[data] source = \"csv\" needs `path`"));
        }
        if d.source != DataSource::Csv && d.samples < 2 {
            return Err(config_err("[data] samples must be at least 2"));
        }
        if !(d.noise >= 0.0) {
            return Err(config_err("[data] noise must be non-negative"));
        }
        if !(d.x_range[0] < d.x_range[1]) {
            return Err(config_err("[data] x_range must be increasing"));
        }
        let f = [d.split.train, d.split.val, d.split.test];
        if f.iter().any(|v| !(*v >= 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(config_err("[data] split fractions must be non-negative and sum to 1"));
        }
        if self.model.hidden.is_empty() || self.model.hidden.contains(&0) {
            return Err(config_err("[model] hidden needs at least one layer of positive width"));
        }
        if let Some(loss) = &self.model.loss {
            loss.validate().map_err(|e| wrap("model", e))?;
        }
        self.train.validate().map_err(|e| wrap("train", e))?;
        let l = &self.laplace;
        if let Some(p) = l.prior_precision {
            if !(p >= 0.0) || !p.is_finite() {
                return Err(config_err("[laplace] prior_precision must be a finite non-negative number"));
            }
        }
        if l.tuning != Tuning::None && l.grid.is_empty() {
            return Err(config_err("[laplace] grid must not be empty when tuning"));
        }
        if l.curvature == CurvatureKind::KfacLastLayer && l.subset != Subset::LastLayer {
            return Err(config_err("[laplace] kfac_last_layer needs subset = \"last_layer\""));
        }
        l.predict.validate().map_err(|e| wrap("laplace.predict", e))?;
        let u = &self.lula;
        u.train.validate().map_err(|e| wrap("lula.train", e))?;
        if let Some(c) = &u.counts {
            if c.len() != self.model.hidden.len() {
                return Err(config_err(format!("[lula] counts needs {} entries, one per hidden layer", self.model.hidden.len())));
            }
        }
        if let Some(g) = &u.grid {
            if g.is_empty() {
                return Err(config_err("[lula] grid must not be empty"));
            }
        }
        if !(u.init_scale >= 0.0) || u.outlier_count == 0 || !(u.outlier_low < u.outlier_high) {
            return Err(config_err("[lula] needs init_scale >= 0, outlier_count > 0 and outlier_low < outlier_high"));
        }
        let e = &self.eval;
        if e.repeats == 0 || e.outlier_count == 0 || !(e.outlier_low < e.outlier_high) {
            return Err(config_err("[eval] needs repeats > 0, outlier_count > 0 and outlier_low < outlier_high"));
        }
        e.predict.validate().map_err(|err| wrap("eval.predict", err))?;
        let m = &self.demo;
        if m.moons_samples < 2 || m.regression_samples < 2 || m.grid_points < 2 || m.line_points < 2 {
            return Err(config_err("[demo] sample and grid counts must be at least 2"));
        }
        Ok(())
    }

    /// Commented reference file with every default.
    pub fn reference() -> String {
        let body = toml::to_string_pretty(&Self::default()).expect("defaults serialize");
        format!(
            "# lula-lab configuration reference: every key with its default value.\n\
             # Optional keys that are unset by default:\n\
             #   [data] path, target          CSV input\n\
             #   [model] loss                 e.g. {{ kind = \"gaussian_nll\", beta = 100.0 }}\n\
             #   [laplace] prior_precision    defaults to [train] weight_decay\n\
             #   [lula] counts, grid          per-layer counts or a unit-count search\n\
             #   [lula.train] in_batch, out_batch\n\n{body}"
        )
    }
}
