use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
[data]
samples = 200
seed = 3

[model]
hidden = [16, 16]

[train]
epochs = 30

[lula]
units = 8
outlier_count = 100

[lula.train]
epochs = 10

[eval]
repeats = 2
outlier_count = 100
sets = ["uniform", "far_ring", "permute"]

[demo]
moons_samples = 120
regression_samples = 60
grid_points = 11
line_points = 31
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lula-lab"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let p = dir.join("config.toml");
    fs::write(&p, format!("{SMALL}\n{extra}")).unwrap();
    p
}

fn summary_value(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("missing {key} in\n{text}"))
        .to_string()
}

#[test]
fn unknown_key_exits_with_two_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[lula]\nunits = 4\nbogus_knob = 1\n").unwrap();
    let out = run(&["train", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus_knob"));
}

#[test]
fn missing_model_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["laplace", "--model", "nope.txt"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().args(["defaults"]).env("LULA_LAB_THREADS", "zero").current_dir(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn defaults_print_a_loadable_reference() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["defaults"], dir.path());
    ok(&out);
    let p = dir.path().join("ref.toml");
    fs::write(&p, &out.stdout).unwrap();
    let out = run(&["train", "--config", p.to_str().unwrap(), "--out", "m.txt"], dir.path());
    ok(&out);
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d, "");
    let c = cfg.to_str().unwrap();
    ok(&run(&["train", "--config", c, "--out", "m/model.txt"], d));
    assert!(d.join("m/model.txt").exists() && d.join("m/model.history.csv").exists());
    let history = fs::read_to_string(d.join("m/model.history.csv")).unwrap();
    assert_eq!(history.lines().count(), 31);

    ok(&run(&["laplace", "--config", c, "--model", "m/model.txt", "--out", "m/laplace.txt"], d));
    let la = fs::read_to_string(d.join("m/laplace.txt")).unwrap();
    assert_eq!(summary_value(&la, "curvature"), "kfac_last_layer");
    assert_eq!(summary_value(&la, "prior_precision"), "1");

    ok(&run(&["lula", "--config", c, "--model", "m/model.txt", "--out", "m/lula.txt"], d));
    for f in ["lula.txt", "lula.mask", "lula.history.csv", "lula.summary.txt"] {
        assert!(d.join("m").join(f).exists(), "{f}");
    }
    let s = fs::read_to_string(d.join("m/lula.summary.txt")).unwrap();
    assert_eq!(summary_value(&s, "preservation_passed"), "true");
    assert_eq!(summary_value(&s, "unit_counts"), "[0, 8]");

    ok(&run(&["eval", "--config", c, "--model", "m/lula.txt", "--out", "m/eval"], d));
    let runs = fs::read_to_string(d.join("m/eval/runs.csv")).unwrap();
    // 2 methods x 2 repeats x (test + 3 sets)
    assert_eq!(runs.lines().count(), 1 + 2 * 2 * 4);
    let s = fs::read_to_string(d.join("m/eval/summary.txt")).unwrap();
    assert_eq!(summary_value(&s, "lula_units"), "[0, 8]");
    assert!(s.contains("la.permute.auroc.mean"));
}

#[test]
fn tuned_laplace_reports_grid() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d, "[laplace]\ntuning = \"ood_mmc\"\ngrid = [0.1, 1.0, 10.0]\n");
    let c = cfg.to_str().unwrap();
    ok(&run(&["train", "--config", c], d));
    ok(&run(&["laplace", "--config", c], d));
    let s = fs::read_to_string(d.join("laplace.txt")).unwrap();
    assert_eq!(summary_value(&s, "grid_points"), "3");
    let chosen: f64 = summary_value(&s, "prior_precision").parse().unwrap();
    assert!([0.1, 1.0, 10.0].contains(&chosen));
}

#[test]
fn collapsed_posterior_matches_map_confidence() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d, "[laplace]\nprior_precision = 1e12\n");
    let c = cfg.to_str().unwrap();
    ok(&run(&["train", "--config", c], d));
    ok(&run(&["eval", "--config", c], d));
    let s = fs::read_to_string(d.join("eval/summary.txt")).unwrap();
    for set in ["test", "uniform", "far_ring"] {
        let map: f64 = summary_value(&s, &format!("map.{set}.mmc.mean")).parse().unwrap();
        let la: f64 = summary_value(&s, &format!("la.{set}.mmc.mean")).parse().unwrap();
        assert!((map - la).abs() < 1e-3, "{set}: {map} vs {la}");
    }
}

#[test]
fn regression_pipeline_reports_std() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d, "").to_str().unwrap().to_string();
    let text = fs::read_to_string(&cfg).unwrap().replace("seed = 3", "seed = 3\nsource = \"toy_regression\"\nstandardize = true");
    fs::write(&cfg, text).unwrap();
    ok(&run(&["train", "--config", &cfg], d));
    ok(&run(&["lula", "--config", &cfg], d));
    ok(&run(&["eval", "--config", &cfg, "--model", "lula.txt"], d));
    let s = fs::read_to_string(d.join("eval/summary.txt")).unwrap();
    let map: f64 = summary_value(&s, "map.uniform.mean_std.mean").parse().unwrap();
    let la: f64 = summary_value(&s, "la.uniform.mean_std.mean").parse().unwrap();
    assert!(la > map);
}

#[test]
fn csv_data_source() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut csv = String::from("a,b,y\n");
    for i in 0..60 {
        let (a, b) = (i as f64 / 10.0, (i % 7) as f64);
        csv.push_str(&format!("{a},{b},{}\n", a.sin() + 0.1 * b));
    }
    fs::write(d.join("data.csv"), csv).unwrap();
    let cfg = d.join("c.toml");
    fs::write(&cfg, "[data]\nsource = \"csv\"\npath = \"data.csv\"\ntarget = \"y\"\nstandardize = true\n[model]\nhidden = [8]\n[train]\nepochs = 5\n").unwrap();
    ok(&run(&["train", "--config", cfg.to_str().unwrap()], d));
    let cfg_missing = d.join("c2.toml");
    fs::write(&cfg_missing, "[data]\nsource = \"csv\"\npath = \"data.csv\"\n").unwrap();
    assert_eq!(run(&["train", "--config", cfg_missing.to_str().unwrap()], d).status.code(), Some(2));
}

#[test]
fn seed_flag_changes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d, "");
    let c = cfg.to_str().unwrap();
    ok(&run(&["train", "--config", c, "--out", "a.txt"], d));
    ok(&run(&["train", "--config", c, "--out", "b.txt", "--seed", "11"], d));
    assert_ne!(fs::read(d.join("a.txt")).unwrap(), fs::read(d.join("b.txt")).unwrap());
}

#[test]
fn demo_toy_writes_six_grids_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d, "");
    ok(&run(&["demo-toy", "--config", cfg.to_str().unwrap(), "--out", "demo"], d));
    let mut names: Vec<String> = fs::read_dir(d.join("demo")).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(
        names,
        ["moons_la.csv", "moons_lula.csv", "moons_map.csv", "regression_la.csv", "regression_lula.csv", "regression_map.csv", "summary.txt"]
    );
    let grid = fs::read_to_string(d.join("demo/moons_la.csv")).unwrap();
    assert_eq!(grid.lines().next(), Some("x1,x2,p1,confidence"));
    assert_eq!(grid.lines().count(), 1 + 11 * 11);
    let s = fs::read_to_string(d.join("demo/summary.txt")).unwrap();
    assert_eq!(summary_value(&s, "moons.lula.labels_match_map"), "true");
}
