//! `demo-toy`: MAP, Laplace and LULA side by side on two toy problems.
//!
//! Writes six grid CSVs for external plotting plus `summary.txt`:
//!
//! - `regression_{map,la,lula}.csv` with columns `x,mean,std,epistemic_std`
//!   over a 1-D grid wider than the training range,
//! - `moons_{map,la,lula}.csv` with columns `x1,x2,p1,confidence` over a
//!   square lattice centred on the origin.

use std::path::Path;

use lula_core::data::{gen_toy_regression, gen_two_moons, gen_uniform_noise, ring_points, Dataset};
use lula_core::laplace::{build_posterior, fit_curvature, map_predict, predict, subset_params, LaplacePosterior, Predictive};
use lula_core::lula::{augment, penultimate_counts, train_lula, InitStd, LulaData};
use lula_core::metrics::{max_confidence, mmc};
use lula_core::network::Network;
use lula_core::training::{predicted_class, train_map, LossKind};
use lula_core::{Matrix, Rng};

use crate::config::ExperimentConfig;
use crate::pipeline::{base_lambda, layer_widths};
use crate::report::{Csv, Summary};
use crate::Result;

const STAGES: [&str; 3] = ["map", "la", "lula"];
const FAR_RING_POINTS: usize = 1000;
/// Floor on the noise level when deriving the regression likelihood.
const MIN_NOISE: f64 = 0.01;

/// Stream offsets for the demo's derived seeds.
const TEST_STREAM: u64 = 1;
const RING_STREAM: u64 = 2;
const OUTLIER_STREAM: u64 = 3;

struct Stages {
    map: Network,
    la: LaplacePosterior,
    lula_net: Network,
    lula: LaplacePosterior,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn posterior(cfg: &ExperimentConfig, net: &Network, x: &Matrix, loss: &LossKind) -> Result<LaplacePosterior> {
    let l = &cfg.laplace;
    let fit = fit_curvature(net, x, loss, l.curvature, l.subset, l.full_cap)?;
    Ok(build_posterior(&fit, subset_params(net, l.subset), base_lambda(cfg))?)
}

/// MAP training, untuned Laplace, then LULA on the last hidden layer.
fn run_stages(cfg: &ExperimentConfig, train: &Dataset, loss: &LossKind, n_out: usize, outliers: &Matrix) -> Result<Stages> {
    let widths = layer_widths(cfg, train.n_features(), n_out);
    let init = Network::random(&Network::mlp_specs(&widths, cfg.model.activation), &mut Rng::new(cfg.model.seed))?;
    let (map, _) = train_map(&init, train, loss, &cfg.train)?;
    let la = posterior(cfg, &map, &train.features, loss)?;
    let u = &cfg.lula;
    let counts = u.counts.clone().unwrap_or_else(|| penultimate_counts(&map, u.units));
    let (aug_net, aug) = augment(&map, &counts, &mut Rng::new(u.train.seed), InitStd::FanIn { scale: u.init_scale })?;
    let outcome = train_lula(&aug_net, &aug, LulaData::new(&train.features, outliers), loss, base_lambda(cfg), &u.train)?;
    let lula = posterior(cfg, &outcome.net, &train.features, loss)?;
    Ok(Stages { map, la, lula_net: outcome.net, lula })
}

impl Stages {
    fn predict(&self, cfg: &ExperimentConfig, stage: &str, x: &Matrix, loss: &LossKind) -> Result<Predictive> {
        let p = &cfg.laplace.predict;
        Ok(match stage {
            "map" => map_predict(&self.map, x, loss)?,
            "la" => predict(&self.map, &self.la, x, loss, p)?,
            _ => predict(&self.lula_net, &self.lula, x, loss, p)?,
        })
    }
}

fn regression(cfg: &ExperimentConfig, out_dir: &Path, s: &mut Summary) -> Result<()> {
    let d = &cfg.demo;
    let (lo, hi) = (cfg.data.x_range[0], cfg.data.x_range[1]);
    let train = gen_toy_regression(d.regression_samples, (lo, hi), d.regression_noise, cfg.data.seed)?;
    let beta = 1.0 / d.regression_noise.max(MIN_NOISE).powi(2);
    let loss = LossKind::GaussianNll { beta };
    let u = &cfg.lula;
    let outliers = gen_uniform_noise(u.outlier_count, 1, -d.line_extent, d.line_extent, cfg.data.seed + OUTLIER_STREAM, 1.0)?;
    let stages = run_stages(cfg, &train, &loss, 1, &outliers.features)?;

    let xs = linspace(-d.line_extent, d.line_extent, d.line_points);
    let grid = Matrix::column(&xs);
    s.text("curvature", stages.la.kind_name());
    s.num("regression.beta", beta);
    for stage in STAGES {
        let Predictive::Regression { mean, epistemic, total } = stages.predict(cfg, stage, &grid, &loss)? else {
            unreachable!("gaussian likelihood");
        };
        let mut csv = Csv::new(&["x", "mean", "std", "epistemic_std"]);
        let (mut inside, mut far) = (Vec::new(), Vec::new());
        for (i, &x) in xs.iter().enumerate() {
            let sd = total[(i, 0)].sqrt();
            csv.nums(&[x, mean[(i, 0)], sd, epistemic[(i, 0)].sqrt()]);
            if (lo..=hi).contains(&x) { inside.push(sd) } else { far.push(sd) }
        }
        csv.save(&out_dir.join(format!("regression_{stage}.csv")))?;
        let avg = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
        s.num(&format!("regression.{stage}.mean_std_inside"), avg(&inside));
        s.num(&format!("regression.{stage}.mean_std_far"), avg(&far));
    }
    Ok(())
}

fn moons(cfg: &ExperimentConfig, out_dir: &Path, s: &mut Summary) -> Result<()> {
    let d = &cfg.demo;
    let seed = cfg.data.seed;
    let train = gen_two_moons(d.moons_samples, d.moons_noise, seed)?;
    let test = gen_two_moons(d.moons_samples, d.moons_noise, seed + TEST_STREAM)?;
    let ring = ring_points(FAR_RING_POINTS, 2, 8.0, 12.0, seed + RING_STREAM)?;
    let loss = LossKind::CategoricalCe;
    let u = &cfg.lula;
    let outliers = gen_uniform_noise(u.outlier_count, 2, -d.grid_extent, d.grid_extent, seed + OUTLIER_STREAM, 1.0)?;
    let stages = run_stages(cfg, &train, &loss, 2, &outliers.features)?;

    let axis = linspace(-d.grid_extent, d.grid_extent, d.grid_points);
    let lattice = Matrix::from_fn(axis.len() * axis.len(), 2, |r, c| if c == 0 { axis[r % axis.len()] } else { axis[r / axis.len()] });
    let map_labels: Vec<usize> = stages.map.predict(&test.features)?.row_iter().map(predicted_class).collect();
    let labels = test.labels().expect("labelled");
    let acc = map_labels.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / labels.len() as f64;
    s.num("moons.map.test_accuracy", acc);
    for stage in STAGES {
        let p = stages.predict(cfg, stage, &lattice, &loss)?;
        let p = p.probabilities().expect("classification");
        let conf = max_confidence(p);
        let mut csv = Csv::new(&["x1", "x2", "p1", "confidence"]);
        for (r, c) in conf.iter().enumerate() {
            csv.nums(&[lattice[(r, 0)], lattice[(r, 1)], p[(r, 1)], *c]);
        }
        csv.save(&out_dir.join(format!("moons_{stage}.csv")))?;
        let p_test = stages.predict(cfg, stage, &test.features, &loss)?;
        let p_ring = stages.predict(cfg, stage, &ring.features, &loss)?;
        s.num(&format!("moons.{stage}.test_mmc"), mmc(p_test.probabilities().expect("classification"))?);
        s.num(&format!("moons.{stage}.far_mmc"), mmc(p_ring.probabilities().expect("classification"))?);
    }
    let lula_labels: Vec<usize> = stages.lula_net.predict(&test.features)?.row_iter().map(predicted_class).collect();
    s.text("moons.lula.labels_match_map", lula_labels == map_labels);
    Ok(())
}

/// Runs both toy problems and writes their grids and summary to `out_dir`.
pub fn cmd_demo_toy(cfg: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    let mut s = Summary::new();
    s.num("prior_precision", base_lambda(cfg));
    s.text("lula_units", cfg.lula.counts.as_ref().map_or_else(|| cfg.lula.units.to_string(), |c| format!("{c:?}")));
    regression(cfg, out_dir, &mut s)?;
    moons(cfg, out_dir, &mut s)?;
    s.save(&out_dir.join("summary.txt"))
}
