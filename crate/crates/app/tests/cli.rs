use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_latentgrade"));
    cmd.env_remove("LATENT_CE_HOME");
    cmd
}

fn run(home: &Path, args: &[&str]) -> Output {
    bin().arg("--home").arg(home).args(args).output().unwrap()
}

fn ok(home: &Path, args: &[&str]) -> Output {
    let out = run(home, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(bin().output().unwrap().status.code(), Some(2));
    assert_eq!(bin().args(["train", "--bogus"]).output().unwrap().status.code(), Some(2));
    assert_eq!(bin().args(["counterfactual"]).output().unwrap().status.code(), Some(2));
    let conflicting = ["counterfactual", "--id", "1", "--allow-extrapolation", "--uncalibrated"];
    assert_eq!(bin().args(conflicting).output().unwrap().status.code(), Some(2));
}

#[test]
fn zero_training_steps_is_an_error() {
    let home = tempfile::tempdir().unwrap();
    let out = run(home.path(), &["train", "--steps", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn missing_artifacts_fail_cleanly() {
    let home = tempfile::tempdir().unwrap();
    for args in [
        &["counterfactual", "--id", "3"][..],
        &["fit-probe"],
        &["calibrate"],
        &["project"],
    ] {
        let out = run(home.path(), args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
    }
}

#[test]
fn home_comes_from_the_environment() {
    let home = tempfile::tempdir().unwrap();
    let out = bin()
        .env("LATENT_CE_HOME", home.path())
        .args(["generate-data", "--n", "100", "--seed", "1"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let data = home.path().join("data");
    assert!(data.join("manifest.csv").is_file());
    assert!(data.join("images/000000.pgm").is_file());
    assert!(data.join("images/000099.pgm").is_file());
    assert!(!data.join("images/000100.pgm").exists());
}

#[test]
fn generation_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    ok(a.path(), &["generate-data", "--n", "120", "--seed", "5"]);
    ok(b.path(), &["generate-data", "--n", "120", "--seed", "5"]);
    let manifest = |p: &Path| std::fs::read(p.join("data/manifest.csv")).unwrap();
    assert_eq!(manifest(a.path()), manifest(b.path()));
    let image = |p: &Path| std::fs::read(p.join("data/images/000042.pgm")).unwrap();
    assert_eq!(image(a.path()), image(b.path()));
}

/// Every stage on a tiny corpus with a barely trained model.
#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let home = dir.path();
    ok(home, &["generate-data", "--n", "100", "--seed", "3"]);
    ok(home, &["train", "--steps", "4", "--batch", "8", "--log-every", "2"]);
    assert!(home.join("model.daec").is_file());
    let report = read_json(&home.join("model.report.json"));
    assert_eq!(report["trace"].as_array().unwrap().len(), 2);

    ok(home, &["embed"]);
    for split in ["train-dae", "train-probe", "calibrate", "test"] {
        assert!(home.join(format!("latents/{split}.zsem")).is_file(), "{split}");
    }

    ok(home, &["fit-probe", "--kind", "logistic", "--standardize"]);
    let probe = read_json(&home.join("probe.json"));
    assert_eq!(probe["kind"], "logistic");
    assert!(probe["cal"].is_null());

    ok(home, &["calibrate", "--mode", "least-squares"]);
    let probe = read_json(&home.join("probe.json"));
    assert_eq!(probe["cal"]["mode"], "least-squares");

    ok(
        home,
        &[
            "evaluate",
            "--recon-limit",
            "2",
            "--skip-generation",
            "--encode-steps",
            "5",
            "--decode-steps",
            "5",
        ],
    );
    let eval = read_json(&home.join("eval/report.json"));
    assert!(eval.as_array().is_some_and(|r| r.len() >= 2), "{eval}");
    assert!(home.join("eval/report.txt").is_file());

    ok(
        home,
        &["counterfactual", "--id", "17", "--grade", "3", "--encode-steps", "5", "--decode-steps", "5"],
    );
    let ce = home.join("ce");
    assert!(ce.join("ce_17_recon.pgm").is_file());
    assert!(ce.join("ce_17_3.pgm").is_file());
    let result = read_json(&ce.join("ce_17.json"));
    assert_eq!(result["id"], 17);
    assert!((result["score_edited"].as_f64().unwrap() - 3.0).abs() < 1e-6);

    ok(home, &["counterfactual", "--id", "17", "--encode-steps", "5", "--decode-steps", "5"]);
    assert!(ce.join("ce_17_reflect.pgm").is_file());

    let out = run(home, &["counterfactual", "--id", "17", "--grade", "7"]);
    assert_eq!(out.status.code(), Some(1), "grade beyond the scale");

    ok(home, &["project", "--split", "calibrate"]);
    let projection = read_json(&home.join("projection_calibrate.json"));
    assert_eq!(projection["split"], "calibrate");
    assert!(!projection["points"].as_array().unwrap().is_empty());
}
