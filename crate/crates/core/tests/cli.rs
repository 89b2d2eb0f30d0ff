use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_carleman"))
}

fn preset(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("presets")
        .join(format!("{name}.toml"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn verify_reports_failed_gradient_condition() {
    let cfg = preset("disk-trap");
    let out = run(&["verify", "--config", cfg.to_str().unwrap(), "--json", "-"]);
    assert_eq!(out.status.code(), Some(2));
    let v = json(&out);
    assert_eq!(v["verdict"], "failed_con2");
    assert_eq!(v["exit_code"], 2);
    let report = &v["outcome"]["verify"];
    assert_eq!(report["worst_point_con2"], serde_json::json!([0.0, 0.0]));
    assert!((report["mu0"].as_f64().unwrap() - 2.0).abs() < 1e-12);
}

#[test]
fn construct_certifies_isotropic_field() {
    let cfg = preset("isotropic-exp");
    let out = run(&["construct", "--config", cfg.to_str().unwrap(), "--json", "-"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    let c = &v["outcome"]["construct"];
    assert_eq!(c["certificate"]["sign_case"], "positive");
    assert!(c["certificate"]["report"]["mu0"].as_f64().unwrap() > 0.0);
    assert_eq!(c["reverification"]["resolution"], 65);
    assert_eq!(c["attempts"].as_array().unwrap().len(), 1);
}

#[test]
fn construct_reports_recheck_failure() {
    let cfg = preset("cubic-exp");
    let out = run(&["construct", "--config", cfg.to_str().unwrap(), "--json", "-"]);
    assert_eq!(out.status.code(), Some(2));
    let v = json(&out);
    assert_eq!(v["verdict"], "reverification_failed");
    let c = &v["outcome"]["construct"];
    assert_eq!(c["certificate"]["report"]["verdict"], "certified");
    assert_eq!(c["reverification"]["verdict"], "failed_con1");
}

#[test]
fn forced_construction_on_disk_trap_is_not_certified() {
    let cfg = preset("disk-trap");
    let path = cfg.to_str().unwrap();
    let out = run(&[
        "construct",
        "--config",
        path,
        "--force-j",
        "1",
        "--lambda-max",
        "128",
        "--json",
        "-",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let v = json(&out);
    assert_eq!(v["verdict"], "lambda_max_exceeded");
    assert!(!v["outcome"]["construct"]["failed_steps"].as_array().unwrap().is_empty());

    let out = run(&["construct", "--config", path, "--force-j", "1", "--json", "-"]);
    assert_eq!(out.status.code(), Some(4));
    let v = json(&out);
    assert_eq!(v["verdict"], "overflow");
    let msg = v["outcome"]["construct"]["message"].as_str().unwrap();
    assert!(msg.contains("translate the domain toward the origin"), "{msg}");
}

#[test]
fn unforced_construction_without_index_exits_two() {
    let cfg = preset("disk-trap");
    let out = run(&["construct", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("no_admissible_index"), "{text}");
}

#[test]
fn curvature_and_rays_commands() {
    let cfg = preset("curvature-signchange");
    let out = run(&["curvature", "--config", cfg.to_str().unwrap(), "--json", "-"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["verdict"], "sign_changing");
    assert_eq!(v["outcome"]["curvature"]["w32"]["holds"], true);

    let cfg = preset("disk-trap");
    let out = run(&["rays", "--config", cfg.to_str().unwrap(), "--count", "6", "--json", "-"]);
    assert_eq!(out.status.code(), Some(0));
    let rays = json(&out)["outcome"]["rays"]["rays"].as_array().unwrap().clone();
    assert_eq!(rays.len(), 6);
    assert!(rays.iter().all(|r| r["max_relative_drift"].as_f64().unwrap() <= 1e-6));
}

#[test]
fn dump_grid_writes_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("grid.csv");
    let report = dir.path().join("report.json");
    let cfg = preset("disk-trap");
    let out = run(&[
        "verify",
        "--config",
        cfg.to_str().unwrap(),
        "--resolution",
        "9",
        "--dump-grid",
        csv.to_str().unwrap(),
        "--json",
        report.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "x1,x2,lambda_min_2B_vs_A,lambda_min_B,grad_norm,m1,m2"
    );
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(
        lines.count() as u64,
        v["outcome"]["verify"]["point_count"].as_u64().unwrap()
    );
}

#[test]
fn config_errors_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[problem]\ndim = 2\nunknown = 1\n").unwrap();
    let out = run(&["verify", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!out.stderr.is_empty());

    let out = run(&["verify", "--config", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));

    let cfg = preset("isotropic-exp");
    let out = run(&["verify", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "verify without a weight is a config error");
}

#[test]
fn examples_all_match_and_list() {
    let out = run(&["examples", "all", "--json", "-"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["all_matched"], true);
    let names: Vec<&str> = v["examples"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["name"].as_str().unwrap())
        .collect();
    assert_eq!(
        names,
        ["disk-trap", "curvature-signchange", "cubic-exp", "isotropic-exp"]
    );

    let out = run(&["examples", "--list"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn verify_report_matches_snapshot() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("data");
    let cfg = dir.join("classical.toml");
    let out = run(&["verify", "--config", cfg.to_str().unwrap(), "--json", "-"]);
    assert_eq!(out.status.code(), Some(0));
    let got = carleman_core::report::without_durations(&String::from_utf8(out.stdout).unwrap());
    let want = std::fs::read_to_string(dir.join("classical.verify.snap")).unwrap();
    assert_eq!(got.trim_end(), want.trim_end());
}
