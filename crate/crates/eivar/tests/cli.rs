//! End-to-end tests of the `eivar` binary: output files, exit codes, and
//! byte-level determinism across reruns.

use std::path::Path;
use std::process::{Command, Output};

fn eivar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eivar"))
        .args(args)
        .output()
        .expect("spawn eivar")
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> String {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_vec_pretty(value).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

fn small_run_config() -> serde_json::Value {
    serde_json::json!({
        "run": {
            "problem": "unimodal",
            "acquisition": "maxvar",
            "n0": 8,
            "n": 4,
            "candidates": 15,
            "reference": {"kind": "sample", "count": 40},
            "seed": 3
        }
    })
}

#[test]
fn run_writes_expected_files_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(dir.path(), "exp.json", &small_run_config());
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let output = eivar(&["run", "--config", &cfg, "--out", &out.to_string_lossy()]);
        assert!(
            output.status.success(),
            "stderr: {}",
            String::from_utf8_lossy(&output.stderr)
        );
    }
    for name in ["acquisitions.csv", "mad_trace.csv", "jobs_trace.csv"] {
        assert!(out_a.join(name).exists(), "missing {name}");
        assert_eq!(
            std::fs::read(out_a.join(name)).unwrap(),
            std::fs::read(out_b.join(name)).unwrap(),
            "{name} differs between identical runs"
        );
    }
    let load = |out: &Path| -> serde_json::Value {
        let mut v: serde_json::Value =
            serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
        // wall time is the only field allowed to vary between identical runs
        v.as_object_mut().unwrap().remove("wall_time_seconds");
        v
    };
    let summary = load(&out_a);
    assert_eq!(summary, load(&out_b));
    assert_eq!(summary["seed"], 3);
    assert_eq!(summary["aborted"], false);
    assert!(summary["final_mad"].as_f64().unwrap() > 0.0);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(dir.path(), "exp.json", &small_run_config());
    let out = dir.path().join("out");
    let output = eivar(&[
        "run",
        "--config",
        &cfg,
        "--out",
        &out.to_string_lossy(),
        "--seed",
        "11",
    ]);
    assert!(output.status.success());
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 11);
}

#[test]
fn invalid_config_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut bad = small_run_config();
    bad["run"]["typo_field"] = serde_json::json!(1);
    let cfg = write_json(dir.path(), "bad.json", &bad);
    let output = eivar(&["run", "--config", &cfg, "--out", &dir.path().join("o").to_string_lossy()]);
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("typo_field"));
}

#[test]
fn missing_config_file_exits_with_code_2() {
    let output = eivar(&["run", "--config", "/nonexistent/exp.json"]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn replicate_aggregates_quantiles() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg_value = small_run_config();
    cfg_value["replicate_seeds"] = serde_json::json!([1, 2, 3]);
    let cfg = write_json(dir.path(), "rep.json", &cfg_value);
    let out = dir.path().join("rep");
    let output = eivar(&["replicate", "--config", &cfg, "--out", &out.to_string_lossy()]);
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    for seed in [1, 2, 3] {
        assert!(out.join(format!("seed_{seed}")).join("summary.json").exists());
    }
    let quantiles = std::fs::read_to_string(out.join("mad_quantiles.csv")).unwrap();
    assert!(quantiles.starts_with("acquisition,eval_index,q05,median,q95"));
    assert!(quantiles.lines().count() > 1);
}

#[test]
fn schedule_simulates_without_a_problem() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(
        dir.path(),
        "sched.json",
        &serde_json::json!({
            "style": "async",
            "workers": 4,
            "durations": [2.442, 2.051, 3.789, 1.584, 2.436, 1.944, 2.5, 1.0,
                          2.096, 3.641, 1.669, 1.005],
            "trigger": 2,
            "per_trigger": 2
        }),
    );
    let out = dir.path().join("sched");
    let output = eivar(&["schedule", "--config", &cfg, "--out", &out.to_string_lossy()]);
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("schedule_summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["jobs"], 12);
    assert_eq!(summary["generations"], 4);
    assert!(out.join("jobs_trace.csv").exists());
}
