//! Black-box tests of the command-line interface: exit codes, report
//! structure, flag echoing, and byte-level determinism.

use std::path::Path;
use std::process::{Command, Output};

use tempfile::tempdir;

const SAFE_TOY: &str = r#"{
    "plant": { "state_dim": 1, "input_dim": 1, "dynamics": ["u1"] },
    "controller": {
        "layers": [
            { "weights": [[0.0]], "bias": [1.0], "activation": "linear" }
        ]
    },
    "init_set": { "lower": [0.0], "upper": [0.1] },
    "control_step": 0.5,
    "safety": {
        "avoid": [ { "lower": [5.0], "upper": [6.0] } ],
        "goal": { "lower": [0.9], "upper": [1.2] }
    }
}"#;

/// Same plant, but the avoid band sits inside the reachable range at t=1.
const UNSAFE_TOY: &str = r#"{
    "plant": { "state_dim": 1, "input_dim": 1, "dynamics": ["u1"] },
    "controller": {
        "layers": [
            { "weights": [[0.0]], "bias": [1.0], "activation": "linear" }
        ]
    },
    "init_set": { "lower": [0.0], "upper": [0.1] },
    "control_step": 0.5,
    "safety": {
        "avoid": [ { "lower": [1.0], "upper": [1.05] } ]
    }
}"#;

/// Contracting plant whose true reach stays below 1, with an avoid band
/// that only a loose over-approximation can touch.
const SPURIOUS_TOY: &str = r#"{
    "plant": { "state_dim": 1, "input_dim": 1, "dynamics": ["-x1 + u1"] },
    "controller": {
        "layers": [
            { "weights": [[0.0]], "bias": [0.0], "activation": "linear" }
        ]
    },
    "init_set": { "lower": [0.5], "upper": [1.0] },
    "control_step": 0.5,
    "safety": {
        "avoid": [ { "lower": [1.5], "upper": [1.7] } ]
    }
}"#;

fn write_model(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.display().to_string()
}

fn lipreach(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lipreach"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(output: &Output) -> serde_json::Value {
    serde_json::from_slice(&output.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}",
            String::from_utf8_lossy(&output.stdout)
        )
    })
}

#[test]
fn safe_system_exits_zero_with_safe_verdict() {
    let dir = tempdir().unwrap();
    let model = write_model(dir.path(), "safe.json", SAFE_TOY);
    let output = lipreach(&["--model", &model, "--horizon", "1.0"]);
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    let report = stdout_json(&output);
    assert_eq!(report["verdict"], "Safe");
    // The closed-form reach at t=1 is [1.0, 1.1]; the box must bracket it.
    let slice = &report["tube"]["slices"][1];
    assert_eq!(slice["time"], 1.0);
    assert!(slice["rect"]["lower"][0].as_f64().unwrap() <= 1.0);
    assert!(slice["rect"]["upper"][0].as_f64().unwrap() >= 1.1);
}

#[test]
fn unsafe_system_exits_one_and_reports_a_witness_trajectory() {
    let dir = tempdir().unwrap();
    let model = write_model(dir.path(), "unsafe.json", UNSAFE_TOY);
    let output = lipreach(&["--model", &model, "--horizon", "1.0"]);
    assert_eq!(output.status.code(), Some(1), "{output:?}");
    let report = stdout_json(&output);
    let witness = &report["verdict"]["Unsafe"];
    assert!(witness.is_object(), "verdict is {:?}", report["verdict"]);
    let x0 = witness["x0"][0].as_f64().unwrap();
    assert!((0.0..=0.1).contains(&x0), "witness start {x0} outside init");
    let time = witness["time"].as_f64().unwrap();
    // Drift 1.0 per second: the avoid band [1.0, 1.05] is only reachable
    // at the last sampled time.
    assert_eq!(time, 1.0);
    assert!(
        witness["trajectory"].as_array().map_or(0, Vec::len) >= 2,
        "witness must carry its sampled trajectory"
    );
}

#[test]
fn spurious_overlap_exits_two_as_unknown() {
    let dir = tempdir().unwrap();
    let model = write_model(dir.path(), "spurious.json", SPURIOUS_TOY);
    // One iteration with a wildly pessimistic slope bound inflates the box
    // over the avoid band even though no trajectory can reach it.
    let output = lipreach(&[
        "--model",
        &model,
        "--horizon",
        "1.0",
        "--kmax",
        "1",
        "--strategy",
        "fixed:10",
    ]);
    assert_eq!(output.status.code(), Some(2), "{output:?}");
    let report = stdout_json(&output);
    let conflict = report["verdict"]["Unknown"]["first_conflict_time"]
        .as_f64()
        .unwrap();
    assert!(conflict > 0.0);
}

#[test]
fn malformed_model_exits_three_with_diagnostic() {
    let dir = tempdir().unwrap();
    let model = write_model(dir.path(), "broken.json", "{ \"plant\": nope");
    let output = lipreach(&["--model", &model, "--horizon", "1.0"]);
    assert_eq!(output.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.starts_with("error:"), "stderr was: {stderr}");
    assert!(stderr.contains("broken.json"), "diagnostic names the file");
}

#[test]
fn missing_model_file_exits_three() {
    let output = lipreach(&["--model", "/nonexistent/x.json", "--horizon", "1.0"]);
    assert_eq!(output.status.code(), Some(3));
}

#[test]
fn unknown_flag_exits_three() {
    let output = lipreach(&["--model", "x.json", "--horizon", "1.0", "--nonsense"]);
    assert_eq!(output.status.code(), Some(3));
}

#[test]
fn times_and_per_step_are_mutually_exclusive() {
    let dir = tempdir().unwrap();
    let model = write_model(dir.path(), "safe.json", SAFE_TOY);
    let output = lipreach(&[
        "--model",
        &model,
        "--horizon",
        "1.0",
        "--times",
        "0.5",
        "--per-step",
        "2",
    ]);
    assert_eq!(output.status.code(), Some(3));
}

#[test]
fn bad_parameter_values_exit_three() {
    let dir = tempdir().unwrap();
    let model = write_model(dir.path(), "safe.json", SAFE_TOY);
    let cases: &[&[&str]] = &[
        &["--horizon", "0"],
        &["--horizon", "1.0", "--eps", "-1"],
        &["--horizon", "1.0", "--kmax", "0"],
        &["--horizon", "1.0", "--r", "1.0"],
        &["--horizon", "1.0", "--per-step", "0"],
        &["--horizon", "1.0", "--strategy", "sideways"],
        &["--horizon", "1.0", "--strategy", "fixed:-2"],
        &["--horizon", "1.0", "--times", "0.5,2.0"],
    ];
    for case in cases {
        let mut full = vec!["--model", model.as_str()];
        full.extend_from_slice(case);
        let output = lipreach(&full);
        assert_eq!(
            output.status.code(),
            Some(3),
            "args {case:?} should be rejected: {:?}",
            String::from_utf8_lossy(&output.stderr)
        );
    }
}

#[test]
fn per_step_refines_the_output_grid_with_exact_boundaries() {
    let dir = tempdir().unwrap();
    let model = write_model(dir.path(), "safe.json", SAFE_TOY);
    let output = lipreach(&[
        "--model",
        &model,
        "--horizon",
        "1.0",
        "--per-step",
        "2",
        "--oracle-grid",
        "0",
    ]);
    assert_eq!(output.status.code(), Some(0));
    let report = stdout_json(&output);
    let times: Vec<f64> = report["config"]["times"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(times, vec![0.25, 0.5, 0.75, 1.0]);
}

#[test]
fn explicit_times_are_sorted_deduplicated_and_echoed() {
    let dir = tempdir().unwrap();
    let model = write_model(dir.path(), "safe.json", SAFE_TOY);
    let output = lipreach(&[
        "--model",
        &model,
        "--horizon",
        "1.0",
        "--times",
        "1.0,0.5,0.5",
    ]);
    assert_eq!(output.status.code(), Some(0));
    let report = stdout_json(&output);
    assert_eq!(report["config"]["times"], serde_json::json!([0.5, 1.0]));
    assert_eq!(report["config"]["per_step"], serde_json::Value::Null);
}

#[test]
fn config_echo_round_trips_every_flag() {
    let dir = tempdir().unwrap();
    let model = write_model(dir.path(), "safe.json", SAFE_TOY);
    let out_path = dir.path().join("report.json");
    let out_str = out_path.display().to_string();
    let output = lipreach(&[
        "--model",
        &model,
        "--horizon",
        "1.0",
        "--per-step",
        "2",
        "--eps",
        "0.01",
        "--kmax",
        "50",
        "--r",
        "1.7",
        "--strategy",
        "global",
        "--substeps",
        "10",
        "--oracle-grid",
        "64",
        "--threads",
        "2",
        "--format",
        "json",
        "--out",
        &out_str,
    ]);
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&out_path).unwrap()).unwrap();
    let config = &report["config"];
    assert_eq!(config["model"], model.as_str());
    assert_eq!(config["horizon"], 1.0);
    assert_eq!(config["per_step"], 2);
    assert_eq!(config["eps"], 0.01);
    assert_eq!(config["k_max"], 50);
    assert_eq!(config["r"], 1.7);
    assert_eq!(config["strategy"], "global");
    assert_eq!(config["substeps"], 10);
    assert_eq!(config["oracle_grid"], 64);
    assert_eq!(config["threads"], 2);
    assert_eq!(config["format"], "json");
    assert_eq!(config["out"], out_str.as_str());
    // With --out, stdout carries the verdict summary.
    assert!(String::from_utf8_lossy(&output.stdout).contains("verdict: safe"));
}

#[test]
fn identical_runs_produce_byte_identical_reports() {
    let dir = tempdir().unwrap();
    let model = write_model(dir.path(), "safe.json", SAFE_TOY);
    let out = dir.path().join("report.json");
    let out_str = out.display().to_string();
    let args = [
        "--model",
        &model,
        "--horizon",
        "1.0",
        "--threads",
        "3",
        "--out",
        &out_str,
    ];
    assert_eq!(lipreach(&args).status.code(), Some(0));
    let first = std::fs::read(&out).unwrap();
    assert_eq!(lipreach(&args).status.code(), Some(0));
    let second = std::fs::read(&out).unwrap();
    assert_eq!(first, second, "reruns must be byte-identical");

    let csv_args = [
        "--model",
        &model,
        "--horizon",
        "1.0",
        "--threads",
        "3",
        "--format",
        "csv",
        "--out",
        &out_str,
    ];
    assert_eq!(lipreach(&csv_args).status.code(), Some(0));
    let first = std::fs::read(&out).unwrap();
    assert_eq!(lipreach(&csv_args).status.code(), Some(0));
    let second = std::fs::read(&out).unwrap();
    assert_eq!(first, second, "CSV reruns must be byte-identical");
}

#[test]
fn csv_report_has_one_row_per_time_and_dimension() {
    let dir = tempdir().unwrap();
    let model = write_model(dir.path(), "safe.json", SAFE_TOY);
    let output = lipreach(&["--model", &model, "--horizon", "1.0", "--format", "csv"]);
    assert_eq!(output.status.code(), Some(0));
    let text = String::from_utf8(output.stdout).unwrap();
    assert!(text.contains("# verdict: safe"));
    let mut lines = text.lines().skip_while(|l| l.starts_with('#'));
    assert_eq!(
        lines.next(),
        Some("time,dim,lower,upper,converged_min,converged_max")
    );
    // Two output times, one state dimension.
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2, "rows: {rows:?}");
    assert!(rows[0].starts_with("0.5,1,"));
    assert!(rows[1].starts_with("1,1,"));
}

#[test]
fn model_without_safety_section_is_vacuously_safe() {
    let dir = tempdir().unwrap();
    let mut doc: serde_json::Value = serde_json::from_str(SAFE_TOY).unwrap();
    doc.as_object_mut().unwrap().remove("safety");
    let model = write_model(dir.path(), "nosafety.json", &doc.to_string());
    let output = lipreach(&["--model", &model, "--horizon", "1.0"]);
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    let report = stdout_json(&output);
    assert_eq!(report["verdict"], "Safe");
}

#[test]
fn oracle_metrics_appear_for_two_state_models() {
    let dir = tempdir().unwrap();
    let planar = r#"{
        "plant": {
            "state_dim": 2,
            "input_dim": 1,
            "dynamics": ["x2", "-0.8*x1 - 0.3*x2 + u1"]
        },
        "controller": {
            "layers": [
                { "weights": [[0.3, -0.2]], "bias": [0.0], "activation": "tanh" },
                { "weights": [[0.5]], "bias": [0.0], "activation": "linear" }
            ]
        },
        "init_set": { "lower": [0.2, -0.1], "upper": [0.4, 0.1] },
        "control_step": 0.25
    }"#;
    let model = write_model(dir.path(), "planar.json", planar);
    let output = lipreach(&[
        "--model",
        &model,
        "--horizon",
        "0.5",
        "--eps",
        "0.01",
        "--kmax",
        "200",
    ]);
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    let report = stdout_json(&output);
    let projections = report["metrics"]["projections"].as_array().unwrap();
    assert_eq!(projections.len(), 1);
    assert_eq!(projections[0]["dims"], serde_json::json!([0, 1]));
    let per_time = projections[0]["per_time"].as_array().unwrap();
    assert_eq!(per_time.len(), 2);
    for sample in per_time {
        let box_area = sample["box_area"].as_f64().unwrap();
        let hull = sample["hull_area"].as_f64().unwrap();
        let tightness = sample["tightness"].as_f64().unwrap();
        assert!(box_area > 0.0 && hull > 0.0);
        assert!(
            (tightness - box_area / hull).abs() < 1e-12,
            "tightness must be box/hull"
        );
        assert!(
            tightness >= 1.0,
            "a sound box cannot be smaller than the hull"
        );
    }

    // Disabling the oracle drops the hull fields but keeps box areas.
    let output = lipreach(&[
        "--model",
        &model,
        "--horizon",
        "0.5",
        "--eps",
        "0.01",
        "--kmax",
        "200",
        "--oracle-grid",
        "0",
    ]);
    let report = stdout_json(&output);
    let sample = &report["metrics"]["projections"][0]["per_time"][0];
    assert!(sample["box_area"].is_number());
    assert!(sample.get("hull_area").is_none());
    assert!(sample.get("tightness").is_none());
}
