use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn feat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_feat"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.ini");
    std::fs::write(&path, body).unwrap();
    path
}

const GAUSSIAN_1D: &str = "\
[run]
seed = 11

[system.a]
kind = gaussian
mean = 0
std = 1

[system.b]
kind = gaussian
mean = 0
std = 2

[sampler]
samples = 2000
chains = 8
thin = 10
step_size = 1.0

[transport]
sigma = 0.2
steps = 100
paths = 2000

[estimator]
bootstrap = 20
";

fn report_value(path: &Path, estimator: &str) -> f64 {
    let text = std::fs::read_to_string(path).unwrap();
    let line = text.lines().find(|l| l.starts_with(&format!("{estimator},"))).unwrap();
    line.split(',').nth(1).unwrap().parse().unwrap()
}

#[test]
fn oracle_recovers_log_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), GAUSSIAN_1D);
    let out = dir.path().join("out");
    let o = feat(&["oracle", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let est = report_value(&out.join("report.csv"), "min_variance");
    assert!((est + std::f64::consts::LN_2).abs() <= 0.02, "{est}");
    for f in ["samples_a.txt", "samples_b.txt", "works.csv", "report.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn same_config_gives_identical_works() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), GAUSSIAN_1D);
    let mut works = Vec::new();
    for run in ["r1", "r2"] {
        let out = dir.path().join(run);
        let o = feat(&[
            "oracle",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--set",
            "transport.paths=300",
        ]);
        assert!(o.status.success());
        works.push(std::fs::read(out.join("works.csv")).unwrap());
    }
    assert_eq!(works[0], works[1]);
}

#[test]
fn empty_ledger_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), GAUSSIAN_1D);
    std::fs::write(dir.path().join("works.csv"), "direction,work,valid\n").unwrap();
    let o = feat(&["estimate", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.lines().any(|l| l.starts_with("error[empty-ledger]:")), "{err}");
}

#[test]
fn config_problems_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), GAUSSIAN_1D);
    let c = cfg.to_str().unwrap();
    let d = dir.path().to_str().unwrap();
    for args in [
        vec!["sample", "--config", c, "--out", d, "--set", "sampler.bogus=1"],
        vec!["sample", "--config", c, "--out", d, "--set", "run.seed=x"],
        vec!["train", "--config", c, "--out", d],
        vec!["estimate", "--config", "/nonexistent.ini"],
    ] {
        let o = feat(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        let err = String::from_utf8_lossy(&o.stderr);
        assert_eq!(err.lines().filter(|l| l.starts_with("error[")).count(), 1, "{err}");
    }
}

#[test]
fn staged_pipeline_records_model_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        &format!("{GAUSSIAN_1D}\n[train]\niterations = 50\nhidden = 8\nbatch_size = 64\not_batch = 32\n"),
    );
    let c = cfg.to_str().unwrap();
    let d = dir.path().to_str().unwrap();
    for stage in ["sample", "train", "work", "estimate"] {
        let o = feat(&[stage, "--config", c, "--out", d, "--set", "transport.paths=200"]);
        assert!(o.status.success(), "{stage}: {}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["velocity.model", "score.model", "losses.csv", "works.csv", "report.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let meta = std::fs::read_to_string(dir.path().join("report.meta")).unwrap();
    assert!(meta.lines().any(|l| l.starts_with("model.velocity=") && l.len() == "model.velocity=".len() + 40));
    let losses = std::fs::read_to_string(dir.path().join("losses.csv")).unwrap();
    assert!(losses.starts_with("iter,loss_v,loss_dsm,loss_tsm0,loss_tsm1\n"));
}

#[test]
fn gradcheck_passes_and_reweight_needs_umbrellas() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), GAUSSIAN_1D);
    let c = cfg.to_str().unwrap();
    let d = dir.path().to_str().unwrap();
    let o = feat(&["gradcheck", "--config", c, "--out", d]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(dir.path().join("gradcheck.csv").exists());
    let o = feat(&["reweight", "--config", c, "--out", d]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn double_well_reweight_writes_histogram() {
    let dir = tempfile::tempdir().unwrap();
    let body = "\
[run]
seed = 3

[system.a]
kind = double_well
dim = 1
height = 2
umbrella_k = 10
umbrella_center = -0.3

[system.b]
kind = double_well
dim = 1
height = 2
umbrella_k = 10
umbrella_center = 0.6

[sampler]
samples = 4000
step_size = 0.1
thin = 5

[train]
iterations = 200
hidden = 16, 16
ot_batch = 64

[transport]
paths = 300

[estimator]
bootstrap = 10

[reweight]
lo = -2
hi = 2
bins = 20
";
    let cfg = config(dir.path(), body);
    let c = cfg.to_str().unwrap();
    let d = dir.path().to_str().unwrap();
    for stage in ["sample", "train", "work", "estimate", "reweight"] {
        let o = feat(&[stage, "--config", c, "--out", d]);
        assert!(o.status.success(), "{stage}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let hist = std::fs::read_to_string(dir.path().join("histogram.csv")).unwrap();
    let rows: Vec<f64> = hist.lines().skip(1).map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect();
    assert_eq!(rows.len(), 20);
    assert!((rows.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}
