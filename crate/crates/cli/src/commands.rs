//! `train`, `laplace`, `lula` and `eval`.

use std::path::{Path, PathBuf};

use lula_core::data::Dataset;
use lula_core::laplace::{map_predict, predict, predictive_log_likelihood, Predictive, Subset, TuningObjective};
use lula_core::lula::{
    augment, grid_search_units, penultimate_counts, train_lula, GridConfig, InitStd, LulaAugmentation, LulaData,
};
use lula_core::metrics::EvalReport;
use lula_core::network::{self, Network};
use lula_core::training::{accuracy, train_map};
use lula_core::{Matrix, Rng};

use crate::config::ExperimentConfig;
use crate::pipeline::{base_lambda, check_model, eval_set, fit_laplace, fresh_network, lula_outliers, prepare_data, Prepared};
use crate::report::{mean_std, Csv, Summary};
use crate::{CliError, Result};

const PRESERVE_INPUTS: usize = 100;
const PRESERVE_TOL: f64 = 1e-12;
const PRESERVE_STREAM: u64 = 0x9e37_79b9;

/// `model.txt` -> `model.<suffix>`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

fn load_model(path: &Path, data: &Prepared) -> Result<Network> {
    let net = network::load(path)?;
    check_model(&net, data)?;
    Ok(net)
}

/// Trains the MAP network and writes it to `out_model`, with the per-epoch
/// loss in `<stem>.history.csv`.
pub fn cmd_train(cfg: &ExperimentConfig, out_model: &Path) -> Result<()> {
    let data = prepare_data(cfg)?;
    let net = fresh_network(cfg, &data)?;
    log::info!("training {:?} on {} points", net.specs().iter().map(|s| s.out_dim).collect::<Vec<_>>(), data.train.len());
    let (net, history) = train_map(&net, &data.train, &data.loss, &cfg.train)?;
    if let Some(dir) = out_model.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Write { path: dir.to_path_buf(), source })?;
    }
    network::save(&net, out_model)?;
    let mut csv = Csv::new(&["epoch", "loss"]);
    for (i, v) in history.iter().enumerate() {
        csv.nums(&[(i + 1) as f64, *v]);
    }
    csv.save(&sibling(out_model, "history.csv"))?;
    if data.loss.is_classification() && !data.test.is_empty() {
        log::info!("test accuracy {:.4}", accuracy(&net, &data.test)?);
    }
    Ok(())
}

fn subset_name(s: Subset) -> &'static str {
    match s {
        Subset::AllLayers => "all_layers",
        Subset::LastLayer => "last_layer",
    }
}

fn objective_name(o: Option<TuningObjective>) -> &'static str {
    match o {
        None => "none",
        Some(TuningObjective::ValLogLikelihood) => "val_log_likelihood",
        Some(TuningObjective::OodMmc) => "ood_mmc",
    }
}

/// Fits the posterior of a trained model and writes its metadata, including
/// every scored grid point when `λ` is tuned, to `out`.
pub fn cmd_laplace(cfg: &ExperimentConfig, model: &Path, out: &Path) -> Result<()> {
    let data = prepare_data(cfg)?;
    let net = load_model(model, &data)?;
    let fitted = fit_laplace(cfg, &net, &data)?;
    let post = &fitted.posterior;
    let mut s = Summary::new();
    s.text("curvature", post.kind_name());
    s.text("subset", subset_name(post.subset));
    s.text("parameters", post.dim());
    s.text("fit_points", data.train.len());
    s.text("tuning", objective_name(cfg.laplace.tuning.objective()));
    s.num("prior_precision", post.prior_precision);
    if let Some(t) = &fitted.tuning {
        s.text("grid_points", t.candidates.len());
        for (i, c) in t.candidates.iter().enumerate() {
            s.num(&format!("grid.{i}.lambda"), c.lambda);
            s.num(&format!("grid.{i}.score"), c.score.unwrap_or(f64::NAN));
        }
    }
    if !data.test.is_empty() {
        let map = map_predict(&net, &data.test.features, &data.loss)?;
        let la = predict(&net, post, &data.test.features, &data.loss, &cfg.laplace.predict)?;
        s.num("test.map.log_likelihood", predictive_log_likelihood(&map, &data.test)?);
        s.num("test.la.log_likelihood", predictive_log_likelihood(&la, &data.test)?);
    }
    s.save(out)
}

/// Largest relative output difference between two networks on random inputs.
pub fn preservation_check(original: &Network, augmented: &Network, seed: u64) -> Result<f64> {
    let mut rng = Rng::new(seed ^ PRESERVE_STREAM);
    let x = Matrix::from_fn(PRESERVE_INPUTS, original.input_dim(), |_, _| 5.0 * rng.normal());
    let a = original.predict(&x)?;
    let b = augmented.predict(&x)?;
    Ok(a.as_slice().iter().zip(b.as_slice()).map(|(u, v)| (u - v).abs() / u.abs().max(1.0)).fold(0.0, f64::max))
}

fn unit_counts(cfg: &ExperimentConfig, net: &Network, data: &Prepared, inliers: &Matrix, outliers: &Matrix, s: &mut Summary, out: &Path) -> Result<Vec<usize>> {
    let u = &cfg.lula;
    if let Some(candidates) = &u.grid {
        if data.val.is_empty() {
            return Err(CliError::Config("[lula] the unit-count search needs a nonempty validation split".into()));
        }
        let out_val = lula_outliers(cfg, &data.val, 1)?;
        let grid = GridConfig { candidates: candidates.clone(), eval_curvature: cfg.laplace.curvature, predict: cfg.laplace.predict };
        let fit_data = LulaData { fit: &data.train.features, inliers, outliers };
        let result = grid_search_units(net, fit_data, &data.val.features, &out_val, &data.loss, base_lambda(cfg), &u.train, &grid)?;
        let mut csv = Csv::new(&["units", "score", "mmc_in", "mmc_out"]);
        for g in &result.scores {
            let f = |v: Option<f64>| v.unwrap_or(f64::NAN);
            csv.nums(&[g.units as f64, f(g.score), f(g.mmc_in), f(g.mmc_out)]);
        }
        csv.save(&sibling(out, "grid.csv"))?;
        s.text("grid_best_units", result.best);
        return Ok(penultimate_counts(net, result.best));
    }
    Ok(u.counts.clone().unwrap_or_else(|| penultimate_counts(net, u.units)))
}

/// Augments a trained model with LULA units, trains them and writes
/// `out` (model), `<stem>.mask`, `<stem>.history.csv` and
/// `<stem>.summary.txt`. Fails with exit code 1 if the trained network's
/// outputs differ from the original's.
pub fn cmd_lula(cfg: &ExperimentConfig, model: &Path, out: &Path) -> Result<()> {
    let data = prepare_data(cfg)?;
    let net = load_model(model, &data)?;
    let u = &cfg.lula;
    let inlier_set: &Dataset = if u.use_validation { &data.val } else { &data.train };
    if inlier_set.is_empty() {
        return Err(CliError::Config("[lula] the inlier split is empty".into()));
    }
    let outliers = lula_outliers(cfg, inlier_set, 0)?;
    let lambda = base_lambda(cfg);
    let mut s = Summary::new();
    let counts = unit_counts(cfg, &net, &data, &inlier_set.features, &outliers, &mut s, out)?;
    let (aug_net, aug) = augment(&net, &counts, &mut Rng::new(u.train.seed), InitStd::FanIn { scale: u.init_scale })?;
    let lula_data = LulaData { fit: &data.train.features, inliers: &inlier_set.features, outliers: &outliers };
    let outcome = train_lula(&aug_net, &aug, lula_data, &data.loss, lambda, &u.train)?;

    let max_err = preservation_check(&net, &outcome.net, u.train.seed)?;
    let structure = aug.structure_preserved(&net, &outcome.net)?;
    let passed = structure && max_err <= PRESERVE_TOL;

    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Write { path: dir.to_path_buf(), source })?;
    }
    network::save(&outcome.net, out)?;
    aug.save(sibling(out, "mask"))?;
    let mut csv = Csv::new(&["step", "objective"]);
    for (i, v) in outcome.history.iter().enumerate() {
        csv.nums(&[(i + 1) as f64, *v]);
    }
    csv.save(&sibling(out, "history.csv"))?;

    s.text("unit_counts", format!("{counts:?}"));
    s.text("free_parameters", aug.free_count());
    s.num("prior_precision", lambda);
    s.text("steps", outcome.history.len());
    if let (Some(first), Some(last)) = (outcome.history.first(), outcome.history.last()) {
        s.num("objective_first", *first);
        s.num("objective_last", *last);
    }
    s.text("preservation_inputs", PRESERVE_INPUTS);
    s.num("preservation_max_relative_error", max_err);
    s.text("preservation_structure_preserved", structure);
    s.text("preservation_passed", passed);
    s.save(&sibling(out, "summary.txt"))?;
    if !passed {
        return Err(CliError::Check(format!(
            "LULA network changed the outputs (max relative error {max_err:e}, structure preserved: {structure})"
        )));
    }
    Ok(())
}

/// Reads the mask stored next to a LULA model, if any.
pub fn sibling_mask(model: &Path) -> Result<Option<LulaAugmentation>> {
    let path = sibling(model, "mask");
    if path.exists() {
        Ok(Some(LulaAugmentation::load(path)?))
    } else {
        Ok(None)
    }
}

/// Per-dataset values of one metric across repeats.
#[derive(Default)]
struct Collected {
    keys: Vec<String>,
    values: Vec<Vec<f64>>,
}

impl Collected {
    fn push(&mut self, key: String, v: f64) {
        match self.keys.iter().position(|k| *k == key) {
            Some(i) => self.values[i].push(v),
            None => {
                self.keys.push(key);
                self.values.push(vec![v]);
            }
        }
    }
}

fn mean_total_std(pred: &Predictive) -> f64 {
    match pred {
        Predictive::Regression { total, .. } => {
            let v = total.as_slice();
            v.iter().map(|t| t.sqrt()).sum::<f64>() / v.len() as f64
        }
        Predictive::Classification(_) => f64::NAN,
    }
}

/// Evaluates the MAP network and its Laplace posterior on the test split and
/// the configured outlier sets over `[eval] repeats` prediction runs.
///
/// Writes `runs.csv` (one row per method, repeat and dataset) and
/// `summary.txt` (mean and sample std per metric) into `out_dir`.
pub fn cmd_eval(cfg: &ExperimentConfig, model: &Path, out_dir: &Path) -> Result<()> {
    let data = prepare_data(cfg)?;
    let net = load_model(model, &data)?;
    if data.test.is_empty() {
        return Err(CliError::Config("[eval] the test split is empty".into()));
    }
    let mask = sibling_mask(model)?;
    let fitted = fit_laplace(cfg, &net, &data)?;
    let post = &fitted.posterior;
    let e = &cfg.eval;
    let classification = data.loss.is_classification();
    let header: &[&str] =
        if classification { &["method", "repeat", "dataset", "mmc", "auroc", "brier"] } else { &["method", "repeat", "dataset", "mean_std", "log_likelihood"] };
    let mut csv = Csv::new(header);
    let mut collected = Collected::default();
    let map_test = map_predict(&net, &data.test.features, &data.loss)?;
    for r in 0..e.repeats {
        let mut sets = Vec::with_capacity(e.sets.len());
        for &kind in &e.sets {
            sets.push((kind.name().to_string(), eval_set(cfg, kind, &data.test, r as u64)?));
        }
        let pcfg = lula_core::laplace::PredictConfig { seed: e.predict.seed.wrapping_add(r as u64), ..e.predict };
        for method in ["map", "la"] {
            let run = |x: &Matrix| -> Result<Predictive> {
                Ok(if method == "map" { map_predict(&net, x, &data.loss)? } else { predict(&net, post, x, &data.loss, &pcfg)? })
            };
            let test_pred = if method == "map" { map_test.clone() } else { run(&data.test.features)? };
            let mut outs = Vec::with_capacity(sets.len());
            for (name, x) in &sets {
                outs.push((name.clone(), run(x)?));
            }
            if classification {
                let probs = |p: &Predictive| p.probabilities().expect("classification").clone();
                let named: Vec<(String, Matrix)> = outs.iter().map(|(n, p)| (n.clone(), probs(p))).collect();
                let report = EvalReport::build("test", &probs(&test_pred), data.test.labels(), &named)?;
                for d in &report.datasets {
                    let (auroc, brier) = (d.auroc.unwrap_or(f64::NAN), d.brier.unwrap_or(f64::NAN));
                    let fields = [method.to_string(), r.to_string(), d.name.clone(), fmt(d.mmc), fmt(auroc), fmt(brier)];
                    csv.row(&fields);
                    collected.push(format!("{method}.{}.mmc", d.name), d.mmc);
                    if let Some(a) = d.auroc {
                        collected.push(format!("{method}.{}.auroc", d.name), a);
                    }
                    if let Some(b) = d.brier {
                        collected.push(format!("{method}.{}.brier", d.name), b);
                    }
                }
            } else {
                let ll = predictive_log_likelihood(&test_pred, &data.test)?;
                let sd = mean_total_std(&test_pred);
                csv.row(&[method.to_string(), r.to_string(), "test".into(), fmt(sd), fmt(ll)]);
                collected.push(format!("{method}.test.mean_std"), sd);
                collected.push(format!("{method}.test.log_likelihood"), ll);
                for (name, p) in &outs {
                    let sd = mean_total_std(p);
                    csv.row(&[method.to_string(), r.to_string(), name.clone(), fmt(sd), "nan".into()]);
                    collected.push(format!("{method}.{name}.mean_std"), sd);
                }
            }
        }
    }
    csv.save(&out_dir.join("runs.csv"))?;

    let mut s = Summary::new();
    s.text("model", model.display());
    s.text("lula_units", mask.map_or_else(|| "none".to_string(), |m| format!("{:?}", m.unit_counts)));
    s.text("curvature", post.kind_name());
    s.num("prior_precision", post.prior_precision);
    s.text("repeats", e.repeats);
    s.text("samples", e.predict.samples);
    if classification {
        s.num("map.test.accuracy", accuracy(&net, &data.test)?);
    }
    for (k, v) in collected.keys.iter().zip(&collected.values) {
        let (m, sd) = mean_std(v);
        s.num(&format!("{k}.mean"), m);
        s.num(&format!("{k}.std"), sd);
    }
    s.save(&out_dir.join("summary.txt"))
}

fn fmt(v: f64) -> String {
    crate::report::fmt_num(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sibling_paths() {
        assert_eq!(sibling(Path::new("out/model.txt"), "mask"), PathBuf::from("out/model.mask"));
        assert_eq!(sibling(Path::new("m"), "history.csv"), PathBuf::from("m.history.csv"));
    }

    #[test]
    fn preservation_check_detects_changes() {
        let net = Network::random(&Network::mlp_specs(&[2, 5, 2], lula_core::network::Activation::Relu), &mut Rng::new(1)).unwrap();
        let (aug, _) = augment(&net, &[3], &mut Rng::new(2), InitStd::default()).unwrap();
        assert!(preservation_check(&net, &aug, 0).unwrap() <= PRESERVE_TOL);
        let mut other = net.clone();
        other.layers_mut()[1].bias[0] += 1.0;
        assert!(preservation_check(&net, &other, 0).unwrap() > 0.1);
    }
}
