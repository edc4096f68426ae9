use std::path::Path;
use std::process::{Command, Output};

fn puscreen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_puscreen")).args(args).output().unwrap()
}

fn small_synth(dir: &Path) {
    let cfg = dir.join("synth.json");
    std::fs::write(
        &cfg,
        r#"{"n_establishments": 120, "n_weeks": 10, "n_distractors": 6, "n_cities": 2}"#,
    )
    .unwrap();
    let out = puscreen(&["synth", "--config", cfg.to_str().unwrap(), "--seed", "7", "--out-dir", dir.join("data").to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn run_all(dir: &Path, out: &str) -> Output {
    let data = dir.join("data");
    puscreen(&[
        "run",
        "--all",
        "--seed",
        "7",
        "--synth-dir",
        data.to_str().unwrap(),
        "--k",
        "3",
        "--n-trees",
        "10",
        "--out-dir",
        dir.join(out).to_str().unwrap(),
    ])
}

#[test]
fn full_run_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    small_synth(dir.path());
    for name in ["a", "b"] {
        let out = run_all(dir.path(), name);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let read = |name: &str| std::fs::read(dir.path().join(name).join("manifest.json")).unwrap();
    let manifest: serde_json::Value = serde_json::from_slice(&read("a")).unwrap();
    let artifacts = manifest["artifacts"].as_array().unwrap();
    assert_eq!(artifacts.len(), 7);
    for a in artifacts {
        let path = a["path"].as_str().unwrap();
        assert!(dir.path().join("a").join(path).exists() || Path::new(path).exists(), "{path}");
    }
    assert_eq!(read("a"), read("b"));
}

#[test]
fn stage_failures_use_stage_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    small_synth(dir.path());
    let data = dir.path().join("data");
    let labeled = dir.path().join("labeled.json");
    let out = puscreen(&[
        "ingest",
        "--pois",
        data.join("visits.jsonl").to_str().unwrap(),
        "--ads",
        data.join("ads.csv").to_str().unwrap(),
        "--out",
        labeled.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = puscreen(&[
        "features",
        "--labeled",
        labeled.to_str().unwrap(),
        "--geo",
        dir.path().join("missing.csv").to_str().unwrap(),
        "--partisan",
        data.join("partisan.csv").to_str().unwrap(),
        "--out",
        dir.path().join("features.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(12));

    let out = puscreen(&["ingest", "--pois", "/nonexistent", "--ads", "/nonexistent", "--out", "x"]);
    assert_eq!(out.status.code(), Some(11));

    assert_eq!(puscreen(&["frobnicate"]).status.code(), Some(2));
}
