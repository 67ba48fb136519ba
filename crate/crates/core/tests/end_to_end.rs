use std::io::Cursor;

use lula_core::data::{gen_two_moons, gen_uniform_noise, read_csv, split, standardize, SplitSpec, TargetColumn};
use lula_core::laplace::{
    fit_curvature, last_layer_params, map_predict, predict, tune_prior_precision, CurvatureKind, PredictConfig, Subset,
    TuningObjective, DEFAULT_FULL_CAP,
};
use lula_core::lula::{augment, last_layer_posterior, penultimate_counts, train_lula, InitStd, LulaAugmentation, LulaData, LulaTrainConfig};
use lula_core::metrics::{mmc, EvalReport};
use lula_core::network::{self, Activation, Network};
use lula_core::training::{accuracy, train_map, LossKind, TrainConfig};
use lula_core::{Matrix, Rng};

fn moons_map() -> (Network, lula_core::data::Dataset) {
    let data = gen_two_moons(200, 0.1, 0).unwrap();
    let init = Network::random(&Network::mlp_specs(&[2, 16, 16, 2], Activation::Relu), &mut Rng::new(1)).unwrap();
    let cfg = TrainConfig { learning_rate: 1e-2, epochs: 60, ..TrainConfig::default() };
    let (net, history) = train_map(&init, &data, &LossKind::CategoricalCe, &cfg).unwrap();
    assert!(history.last().unwrap() < &history[0]);
    (net, data)
}

#[test]
fn map_laplace_lula_pipeline() {
    let (map, data) = moons_map();
    assert!(accuracy(&map, &data).unwrap() > 0.95);
    let loss = LossKind::CategoricalCe;
    let outliers = gen_uniform_noise(200, 2, -10.0, 10.0, 2, 1.0).unwrap();

    let (aug_net, aug) = augment(&map, &penultimate_counts(&map, 16), &mut Rng::new(3), InitStd::default()).unwrap();
    let cfg = LulaTrainConfig { epochs: 40, learning_rate: 0.1, ..LulaTrainConfig::default() };
    let lula = train_lula(&aug_net, &aug, LulaData::new(&data.features, &outliers.features), &loss, 1.0, &cfg).unwrap();
    assert!(lula.history.last().unwrap() < &lula.history[0]);
    assert!(aug.structure_preserved(&map, &lula.net).unwrap());

    let far = gen_uniform_noise(300, 2, 20.0, 30.0, 4, 1.0).unwrap();
    let pcfg = PredictConfig { samples: 200, ..PredictConfig::default() };
    let la = last_layer_posterior(&map, &data.features, &loss, CurvatureKind::KfacLastLayer, 1.0).unwrap();
    let lp = last_layer_posterior(&lula.net, &data.features, &loss, CurvatureKind::KfacLastLayer, 1.0).unwrap();
    let la_far = predict(&map, &la, &far.features, &loss, &pcfg).unwrap();
    let lu_far = predict(&lula.net, &lp, &far.features, &loss, &pcfg).unwrap();
    let (a, b) = (mmc(la_far.probabilities().unwrap()).unwrap(), mmc(lu_far.probabilities().unwrap()).unwrap());
    assert!(b < a, "far-field confidence {a} -> {b}");

    let la_in = predict(&map, &la, &data.features, &loss, &pcfg).unwrap();
    let lu_in = predict(&lula.net, &lp, &data.features, &loss, &pcfg).unwrap();
    let report_la = EvalReport::build("in", la_in.probabilities().unwrap(), data.labels(), &[("far".into(), la_far.probabilities().unwrap().clone())]).unwrap();
    let report_lu = EvalReport::build("in", lu_in.probabilities().unwrap(), data.labels(), &[("far".into(), lu_far.probabilities().unwrap().clone())]).unwrap();
    assert!(report_lu.get("far").unwrap().auroc.unwrap() >= report_la.get("far").unwrap().auroc.unwrap());
}

#[test]
fn augmented_model_and_mask_round_trip() {
    let (map, _) = moons_map();
    let (aug_net, aug) = augment(&map, &[4, 8], &mut Rng::new(5), InitStd::Fixed(0.3)).unwrap();
    let mut buf = Vec::new();
    network::write_to(&aug_net, &mut buf).unwrap();
    let back = network::read_from(Cursor::new(&buf)).unwrap();
    assert_eq!(back, aug_net);
    let mut mbuf = Vec::new();
    aug.write_to(&mut mbuf).unwrap();
    let maug = LulaAugmentation::read_from(Cursor::new(&mbuf)).unwrap();
    assert_eq!(maug, aug);
    assert!(maug.structure_preserved(&map, &back).unwrap());
    assert_eq!(maug.strip(&back).unwrap(), map);
}

#[test]
fn collapsed_posterior_recovers_map_predictions() {
    let (map, data) = moons_map();
    let loss = LossKind::CategoricalCe;
    let post = last_layer_posterior(&map, &data.features, &loss, CurvatureKind::FullGgn, 1e12).unwrap();
    let la = predict(&map, &post, &data.features, &loss, &PredictConfig::default()).unwrap();
    let m = map_predict(&map, &data.features, &loss).unwrap();
    let (a, b) = (la.probabilities().unwrap(), m.probabilities().unwrap());
    assert!(a.sub(b).unwrap().max_abs() < 1e-4);
    assert_eq!(post.mean, last_layer_params(&map));
}

#[test]
fn csv_regression_with_tuned_prior() {
    let mut rng = Rng::new(6);
    let mut text = String::from("x1,x2,target\n");
    for _ in 0..150 {
        let (a, b) = (rng.uniform(-2.0, 2.0), rng.uniform(0.0, 50.0));
        text.push_str(&format!("{a},{b},{}\n", a.sin() + 0.01 * b + 0.05 * rng.normal()));
    }
    let data = read_csv(Cursor::new(text), &TargetColumn::Name("target".into()), true).unwrap();
    let (train, val, test) = split(&data, &SplitSpec::default()).unwrap();
    let (train, rest, stats) = standardize(&train, &[val, test]).unwrap();
    assert_eq!(stats.mean.len(), 2);
    let loss = LossKind::GaussianNll { beta: 100.0 };
    let init = Network::random(&Network::mlp_specs(&[2, 20, 1], Activation::Tanh), &mut Rng::new(7)).unwrap();
    let (net, _) = train_map(&init, &train, &loss, &TrainConfig { learning_rate: 1e-2, epochs: 100, ..TrainConfig::default() }).unwrap();
    let fit = fit_curvature(&net, &train.features, &loss, CurvatureKind::DiagGgn, Subset::AllLayers, DEFAULT_FULL_CAP).unwrap();
    let mean = net.to_flat();
    let grid = [1e-2, 1.0, 1e2];
    let t = tune_prior_precision(&net, &fit, &mean, &loss, &rest[0], None, TuningObjective::ValLogLikelihood, &grid, &PredictConfig::default())
        .unwrap();
    assert!(grid.contains(&t.lambda));
    assert!(t.candidates.iter().all(|c| c.score.is_some()));
    let x = Matrix::from_fn(5, 2, |_, _| 10.0);
    assert!(net.predict(&x).unwrap().is_finite());
}
