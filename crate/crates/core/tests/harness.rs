use std::path::Path;

use vrfrbs_core::harness::{
    self, output, run_experiment, summarize, ExperimentConfig, RunOptions, RUNS_HEADER,
};
use vrfrbs_core::{Error, Execution};

fn config(problem: &str, algos: &str, run: &str) -> ExperimentConfig {
    ExperimentConfig::from_json(&format!(
        r#"{{"experiment_id": "it", "problem": {problem}, "algorithms": [{algos}], "run": {run}}}"#
    ))
    .unwrap()
}

fn read(dir: &Path, f: &str) -> String {
    std::fs::read_to_string(dir.join(f)).unwrap()
}

const SIX: &str = r#"{"kind": "l-svrg"}, {"kind": "saga"}, {"kind": "sgd-increasing"},
    {"kind": "l-sarah"}, {"kind": "hybrid-sgd"}, {"kind": "hybrid-svrg"}"#;

#[test]
fn auc_matrix_bookkeeping() {
    let cfg = config(
        r#"{"family": "auc", "n": 400, "d": 6, "seed": 1}"#,
        SIX,
        r#"{"epochs": 5, "seeds": [0, 1, 2, 3, 4]}"#,
    );
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&cfg, dir.path(), RunOptions::default()).unwrap();
    assert_eq!(out.cells.len(), 30);
    let curves: std::collections::BTreeSet<_> = out.summary.iter().map(|s| s.algorithm.clone()).collect();
    assert_eq!(curves.len(), 6);
    let runs = read(dir.path(), "runs.csv");
    assert_eq!(runs.lines().next().unwrap(), RUNS_HEADER);
    assert_eq!(runs.lines().count(), out.rows.len() + 1);
    assert!(!runs.contains('\r'));
    let manifest: serde_json::Value = serde_json::from_str(&read(dir.path(), "manifest")).unwrap();
    assert_eq!(manifest["cells"].as_array().unwrap().len(), 30);
    assert_eq!(manifest["software"], harness::VERSION);
}

#[test]
fn policy_eval_runs_with_fixed_data() {
    let cfg = config(
        r#"{"family": "policy-eval", "states": 10, "actions": 3, "n": 200, "d": 5, "seed": 4}"#,
        r#"{"kind": "saga"}, {"kind": "full-batch", "params": "default:theory", "eta": "1/2L"}"#,
        r#"{"epochs": 10, "seeds": [7, 8], "fix_data": true}"#,
    );
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&cfg, dir.path(), RunOptions::default()).unwrap();
    assert!(out.cells.iter().all(|c| c.data_seed == 4));
    // Same data and deterministic algorithm: identical series across seeds.
    let full: Vec<_> = out.cells.iter().filter(|c| c.algorithm == "full-batch").collect();
    let r0: Vec<f64> = full[0].trace.records.iter().map(|r| r.rel_residual).collect();
    let r1: Vec<f64> = full[1].trace.records.iter().map(|r| r.rel_residual).collect();
    assert_eq!(r0, r1);
}

#[test]
fn reruns_are_byte_identical() {
    let cfg = config(
        r#"{"family": "affine-toy", "n": 60, "dim": 6, "seed": 2}"#,
        r#"{"kind": "hybrid-svrg", "params": "default:theory"}, {"kind": "saga", "params": "default:theory"}"#,
        r#"{"epochs": 6, "record_every_epochs": 0.5, "seeds": [3, 1]}"#,
    );
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_experiment(&cfg, a.path(), RunOptions { jobs: Some(1), exec: Execution::Sequential }).unwrap();
    run_experiment(&cfg, b.path(), RunOptions { jobs: Some(3), exec: Execution::Parallel }).unwrap();
    for f in ["runs.csv", "summary.csv", "manifest"] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f}");
    }
}

#[test]
fn timing_flag_controls_wall_clock() {
    let cfg = config(
        r#"{"family": "affine-toy", "n": 500, "dim": 20}"#,
        r#"{"kind": "full-batch", "params": "default:theory"}"#,
        r#"{"epochs": 50, "seeds": [0], "timing": true}"#,
    );
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&cfg, dir.path(), RunOptions::default()).unwrap();
    assert!(out.rows.last().unwrap().wall_ms > 0.0);
    let mut quiet = cfg.clone();
    quiet.run.timing = false;
    let out = run_experiment(&quiet, dir.path(), RunOptions::default()).unwrap();
    assert!(out.rows.iter().all(|r| r.wall_ms == 0.0));
}

#[test]
fn summarize_matches_run_and_bounds_every_series() {
    let cfg = config(
        r#"{"family": "auc", "n": 300, "d": 4, "seed": 5}"#,
        r#"{"kind": "l-svrg"}, {"kind": "saga"}"#,
        r#"{"epochs": 8, "seeds": [0, 1, 2, 3, 4]}"#,
    );
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&cfg, dir.path(), RunOptions::default()).unwrap();
    let first = read(dir.path(), "summary.csv");
    let again = summarize(dir.path()).unwrap();
    assert_eq!(again, out.summary);
    assert_eq!(read(dir.path(), "summary.csv"), first);
    for s in &again {
        for c in out.cells.iter().filter(|c| c.algorithm == s.algorithm) {
            let series: Vec<(f64, f64)> = c.trace.records.iter().map(|r| (r.epoch, r.rel_residual)).collect();
            let v = output::interp_log10(&series, s.epoch).unwrap();
            assert!(s.min_log10 <= v + 1e-12 && v <= s.max_log10 + 1e-12);
        }
    }
}

#[test]
fn summarize_reports_malformed_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("runs.csv"),
        format!("{RUNS_HEADER}\ne,a,0,0.0,0,1.0,1.0,0.0\ne,a,0,1.0,1\n"),
    )
    .unwrap();
    match summarize(dir.path()).unwrap_err() {
        Error::Parse { line, .. } => assert_eq!(line, 3),
        e => panic!("{e}"),
    }
}

#[test]
fn data_files_feed_the_harness() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("auc.txt");
    let ds = vrfrbs_core::problems::gen_auc_dataset(120, 3, 0.2, 0.1, 8).unwrap();
    vrfrbs_core::problems::io::write_auc(&data, &ds).unwrap();
    let cfg = config(
        &format!(r#"{{"family": "auc", "data": {:?}}}"#, data.to_str().unwrap()),
        r#"{"kind": "saga"}"#,
        r#"{"epochs": 3, "seeds": [0, 1]}"#,
    );
    let out = run_experiment(&cfg, &dir.path().join("out"), RunOptions::default()).unwrap();
    assert!(out.cells.iter().all(|c| c.n == 120));
}

#[test]
fn stop_tolerance_ends_runs_early() {
    let cfg = config(
        r#"{"family": "affine-toy", "n": 50, "dim": 5}"#,
        r#"{"kind": "full-batch", "params": "default:theory"}"#,
        r#"{"epochs": 100000, "seeds": [0], "stop_tol": 1e-6}"#,
    );
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&cfg, dir.path(), RunOptions::default()).unwrap();
    let last = out.rows.last().unwrap();
    assert!(last.rel_residual <= 1e-6);
    assert!(last.epoch < 100000.0);
}
