use std::path::Path;
use std::process::{Command, Output};

use meshvmc_cli::io::{read_csv, read_json, Manifest};
use meshvmc_cli::selftest::identical_trees;
use serde::Deserialize;

fn meshvmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_meshvmc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn smoke(out: &Path, args: &[&str]) -> Output {
    let mut all = vec!["--preset", "smoke", "--output", out.to_str().unwrap()];
    all.extend_from_slice(args);
    meshvmc(&all)
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[derive(Debug, Deserialize)]
struct ErrorRow {
    #[allow(dead_code)]
    time: f64,
    relative_error: f64,
}

#[test]
fn evolve_writes_every_artifact_with_the_config_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = smoke(&out, &["evolve"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: Manifest = read_json(&out.join("manifest.json")).unwrap();
    for f in ["checkpoint.json", "final_state.json", "config.json", "trajectory/step_000000.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    for f in ["error.csv", "geometry_trace.csv", "pretrain_trace.csv"] {
        let (hash, _): (String, Vec<serde_json::Value>) = read_csv(&out.join(f)).unwrap();
        assert_eq!(hash, manifest.config_hash, "{f}");
    }
    let report: serde_json::Value = read_json(&out.join("evolve.json")).unwrap();
    assert_eq!(report["config_hash"], manifest.config_hash.as_str());
    let (_, rows): (String, Vec<ErrorRow>) = read_csv(&out.join("error.csv")).unwrap();
    assert_eq!(rows.len(), 5);
    let mean = rows.iter().map(|r| r.relative_error).sum::<f64>() / rows.len() as f64;
    let reported = report["mean_relative_error"].as_f64().unwrap();
    assert!((mean - reported).abs() <= 1e-15 * reported.max(1.0));
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    for cmd in ["pretrain", "baseline", "evolve", "ablation"] {
        let (a, b) = (tmp.path().join(format!("{cmd}-a")), tmp.path().join(format!("{cmd}-b")));
        assert_eq!(code(&smoke(&a, &[cmd])), 0);
        assert_eq!(code(&smoke(&b, &[cmd])), 0);
        identical_trees(&a, &b).unwrap_or_else(|e| panic!("{cmd}: {e}"));
    }
}

#[test]
fn different_seeds_give_different_states() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&smoke(&a, &["--set", "seed=1", "pretrain"])), 0);
    assert_eq!(code(&smoke(&b, &["--set", "seed=2", "pretrain"])), 0);
    let o = meshvmc(&["compare", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["identical"], false);
    assert!(report["relative_difference"].as_f64().unwrap() > 0.0);
}

#[test]
fn compare_accepts_same_problem_and_refuses_a_different_mesh() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    assert_eq!(code(&smoke(&a, &["pretrain"])), 0);
    assert_eq!(code(&smoke(&b, &["pretrain"])), 0);
    assert_eq!(code(&smoke(&c, &["--set", "mesh.bounds=[[-4.0,4.0]]", "pretrain"])), 0);
    let same = meshvmc(&["compare", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert_eq!(code(&same), 0);
    let report: serde_json::Value = serde_json::from_slice(&same.stdout).unwrap();
    assert_eq!(report["identical"], true);
    assert_eq!(report["relative_difference"], 0.0);
    let refused = meshvmc(&["compare", a.to_str().unwrap(), c.to_str().unwrap()]);
    assert_eq!(code(&refused), 2);
    assert!(String::from_utf8_lossy(&refused.stderr).contains("different problems"));
}

#[test]
fn validation_problems_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    for args in [
        vec!["--set", "evolution.nonsense=1", "pretrain"],
        vec!["--set", "mesh.d=3", "pretrain"],
        vec!["--preset", "no-such-preset", "pretrain"],
        vec!["--set", "evolution.dt=-1", "evolve"],
        vec!["--set", "seeds=[]", "table1"],
    ] {
        let o = smoke(&out, &args);
        assert_eq!(code(&o), 2, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = smoke(&out, &["price", "--option", "basket_call", "--d", "2", "--sigma", "0.3,0.2,0.1"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn numerical_abort_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let o = smoke(&tmp.path().join("x"), &["--set", "evolution.dt=1e6", "--set", "evolution.steps=50", "evolve"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn price_flags_reach_the_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("p");
    let o = smoke(
        &out,
        &["price", "--method", "analytic", "--K", "1.1", "--r", "0.05", "--sigma", "0.2", "--T", "0.5"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = read_json(&out.join("price_report.json")).unwrap();
    assert_eq!(report["option"]["K"], 1.1);
    assert_eq!(report["option"]["T"], 0.5);
    assert_eq!(report["rel_error_vs_analytic"], 0.0);
    let (_, curve): (String, Vec<serde_json::Value>) = read_csv(&out.join("price_curve.csv")).unwrap();
    assert_eq!(curve.len(), 2);
}

#[test]
fn table1_and_pricing_suite_write_their_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let t1 = tmp.path().join("t1");
    assert_eq!(code(&smoke(&t1, &["table1"])), 0);
    let cell: serde_json::Value = read_json(&t1.join("table1_cell.json")).unwrap();
    assert_eq!(cell["seeds"], serde_json::json!([0, 1]));
    assert_eq!(cell["tolerance"], 1.5e-2);
    let suite = tmp.path().join("suite");
    assert_eq!(code(&smoke(&suite, &["pricing-suite"])), 0);
    let (_, rows): (String, Vec<serde_json::Value>) = read_csv(&suite.join("table3.csv")).unwrap();
    assert_eq!(rows.len(), 1);
}

#[test]
fn single_batch_ablation_has_no_comparison() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("ab");
    let o = smoke(&out, &["--set", "ablation.batches=[256]", "ablation"]);
    assert_eq!(code(&o), 0);
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(report["decreasing"].is_null());
    assert!(out.join("ablation_timing.csv").exists());
}
