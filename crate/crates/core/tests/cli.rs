mod common;

use std::fs;
use std::process::Command;

use common::{cocoon, run_pipeline};

const SMALL: &[&str] = &["--dim", "8", "--epochs", "3", "--reps", "2"];

#[test]
fn full_pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(dir.path(), SMALL);
    for name in [
        "events.csv",
        "ground_truth.csv",
        "categories.csv",
        "genres.csv",
        "covariates.csv",
        "corpus.bin",
        "space.tsv",
        "train_log.csv",
        "metrics.csv",
        "projection.csv",
        "null_ensemble/expected.csv",
        "null_ensemble/manifest.json",
        "null_ensemble/space_000.tsv",
        "null_ensemble/space_001.tsv",
        "cocoon_test.json",
        "radius_hist.csv",
        "regression.csv",
        "summary.json",
    ] {
        assert!(dir.path().join(name).is_file(), "missing {name}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("cocoon_test.json")).unwrap()).unwrap();
    assert_eq!(report["R"], 2);
    assert_eq!(report["n"], 500);
    let log = fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 4);
    let regression = fs::read_to_string(dir.path().join("regression.csv")).unwrap();
    assert!(regression.lines().nth(2).unwrap().starts_with("class_proxy,"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_pipeline(a.path(), SMALL);
    run_pipeline(b.path(), SMALL);
    for name in ["space.tsv", "metrics.csv", "cocoon_test.json", "regression.csv"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn missing_input_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let output = Command::new(env!("CARGO_BIN_EXE_cocoon"))
        .args(["train", "--out", dir.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("corpus.bin"), "{stderr}");
}

#[test]
fn flags_override_config_file_and_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let config = dir.path().join("run.conf");
    fs::write(&config, "# small run\ndim = 6\nepochs = 2\nseed = 5\nsynth_preset = two_block\n").unwrap();
    let config = config.to_str().unwrap();
    cocoon(&["synth", "--config", config, "--out", out]);
    cocoon(&["ingest", "--config", config, "--out", out]);
    cocoon(&["train", "--config", config, "--out", out, "--dim", "4"]);
    let header = fs::read_to_string(dir.path().join("space.tsv")).unwrap();
    assert!(header.starts_with("4 100 200\n"), "{}", header.lines().next().unwrap());

    let from_env = Command::new(env!("CARGO_BIN_EXE_cocoon"))
        .args(["train", "--config", config, "--out", out])
        .env("COCOON_SEED", "not-a-number")
        .output()
        .unwrap();
    assert!(!from_env.status.success());
    assert!(String::from_utf8_lossy(&from_env.stderr).contains("COCOON_SEED"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.conf");
    fs::write(&config, "dims = 4\n").unwrap();
    let output = Command::new(env!("CARGO_BIN_EXE_cocoon"))
        .args(["synth", "--config", config.to_str().unwrap(), "--out", dir.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("dims"));
}
