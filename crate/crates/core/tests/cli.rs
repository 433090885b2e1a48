//! End-to-end runs of the `maxloc` binary.

use std::path::Path;
use std::process::{Command, Output};

fn maxloc(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maxloc"))
        .args(args)
        .current_dir(cwd)
        .env_remove("MAXLOC_WORKERS")
        .output()
        .unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

const PASSING: &str = r#"{
  "experiments": [
    {"name": "flat", "check": "check_nondiff_flat", "params": {"t_end": 2.0, "a_sequence": [0.1]},
     "n_rep": 1, "seed": 0},
    {"name": "scale", "check": "check_scaling",
     "params": {"gamma": 8.0, "gamma1": 1.0, "half_width": 2.0, "n_steps": 256},
     "n_rep": 20, "seed": 1, "emit_replicates": true}
  ]
}"#;

#[test]
fn run_writes_outputs_and_report_reads_them() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), PASSING).unwrap();
    let out = maxloc(
        &["run", "c.json", "--workers", "2", "--out", "res"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));

    let res = dir.path().join("res");
    let csv = std::fs::read_to_string(res.join("summary.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(
        header,
        "experiment,check,lhs,lhs_se,rhs,rhs_se,diff,z,pass,n_rep,n_steps,T,seed"
    );
    assert_eq!(csv.lines().count(), 1 + 3);
    assert!(res.join("replicates").read_dir().unwrap().count() >= 2);

    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(res.join("summary.json")).unwrap()).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 3);

    let rep = maxloc(&["report", "res"], dir.path());
    assert_eq!(rep.status.code(), Some(0));
    let table = text(&rep.stdout);
    assert!(table.contains("flat/nondiff_flat") && table.contains("scale/scaling_argmax"));
    assert!(!table.contains("FAIL"));
}

#[test]
fn failing_check_exits_one_and_report_flags_it() {
    let dir = tempfile::tempdir().unwrap();
    // a threshold this small cannot be met by a noisy estimate
    let cfg = r#"{"experiments": [
      {"name": "strict", "check": "check_cov_identity",
       "params": {"process": {"process": "brownian_motion", "t_end": 1.0, "n_steps": 128}},
       "n_rep": 500, "seed": 3, "z_threshold": 1e-9},
      {"name": "flat", "check": "check_nondiff_flat", "params": {"t_end": 1.0, "a_sequence": [0.1]},
       "n_rep": 1, "seed": 0}]}"#;
    std::fs::write(dir.path().join("c.json"), cfg).unwrap();
    let out = maxloc(&["run", "c.json", "--out", "r"], dir.path());
    assert_eq!(out.status.code(), Some(1), "{}", text(&out.stderr));

    let rep = maxloc(&["report", "r"], dir.path());
    assert_eq!(rep.status.code(), Some(0));
    let table = text(&rep.stdout);
    let strict = table.lines().find(|l| l.contains("strict/")).unwrap();
    let flat = table.lines().find(|l| l.contains("flat/")).unwrap();
    assert!(strict.contains("FAIL"), "{strict}");
    assert!(flat.contains("PASS") && !flat.contains("FAIL"), "{flat}");
}

#[test]
fn bad_configs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (
            "syntax.json",
            "{\"experiments\": [\n  {\"name\": \"x\",}\n]}",
            "line 2",
        ),
        ("empty.json", r#"{"experiments": []}"#, "no experiments"),
        (
            "unknown.json",
            r#"{"experiments": [{"name": "x", "check": "check_nondiff_flat",
               "params": {"t_end": 1.0, "a_sequence": [0.1]}, "n_rep": 1, "seed": 0, "colour": 1}]}"#,
            "colour",
        ),
        (
            "zero_rep.json",
            r#"{"experiments": [{"name": "x", "check": "check_nondiff_flat",
               "params": {"t_end": 1.0, "a_sequence": [0.1]}, "n_rep": 0, "seed": 0}]}"#,
            "n_rep",
        ),
        (
            "bad_param.json",
            r#"{"experiments": [{"name": "bad", "check": "check_cov_identity",
               "params": {"process": {"process": "brownian_motion", "t_end": -1.0, "n_steps": 8}},
               "n_rep": 10, "seed": 0}]}"#,
            "experiment bad",
        ),
    ];
    for (file, body, needle) in cases {
        std::fs::write(dir.path().join(file), body).unwrap();
        let out = maxloc(&["run", file, "--out", "never"], dir.path());
        assert_eq!(out.status.code(), Some(2), "{file}");
        let err = text(&out.stderr);
        assert!(err.contains(needle), "{file}: {err}");
    }
    assert!(!dir.path().join("never").exists());
    let missing = maxloc(&["run", "nope.json"], dir.path());
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn report_on_empty_summary_prints_header_only() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("summary.json"), "[]").unwrap();
    let out = maxloc(&["report", "."], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let stdout = text(&out.stdout);
    let lines: Vec<&str> = stdout.lines().filter(|l| !l.trim().is_empty()).collect();
    assert!(lines[0].starts_with("name"), "{stdout}");
    assert!(
        lines
            .iter()
            .skip(1)
            .all(|l| l.chars().all(|c| c == '-' || c == ' ')),
        "{stdout}"
    );

    std::fs::write(dir.path().join("summary.json"), "{not json").unwrap();
    assert_eq!(maxloc(&["report", "."], dir.path()).status.code(), Some(2));
}

#[test]
fn list_names_every_check() {
    let out = maxloc(&["list"], Path::new("."));
    assert_eq!(out.status.code(), Some(0));
    let listing = text(&out.stdout);
    assert_eq!(listing.lines().count(), 9);
    for name in ["check_cov_identity", "check_chernoff", "check_nondiff_flat"] {
        assert!(listing.contains(name), "{listing}");
    }
}

#[test]
fn workers_env_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), PASSING).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_maxloc"))
        .args(["run", "c.json", "--out", "r"])
        .current_dir(dir.path())
        .env("MAXLOC_WORKERS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
