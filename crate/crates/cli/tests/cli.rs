use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"{
  "slots_N": 6,
  "horizon_T": 12.0,
  "bs_pos": [120.0, 0.0],
  "adversaries": [{ "est_pos": [-150.0, 0.0], "radius_R": 20.0 }]
}"#;

fn secrel(args: &[&str]) -> Output {
    secrel_env(args, &[])
}

fn secrel_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_secrel"));
    cmd.args(args).env_remove("SECREL_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("cfg.json");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn optimize_writes_results_that_validate() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out = tmp.path().join("out");
    let o = secrel_env(
        &["optimize", "--config", &cfg, "--out", out.to_str().unwrap()],
        &[("SECREL_SEED", "7")],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in [
        "trajectory.csv",
        "powers.csv",
        "rates.csv",
        "trace.csv",
        "summary.json",
        "config.json",
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["sampled"]["seed"], 7);
    assert_eq!(summary["converged"], true);
    let traj = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(!traj.contains('\r'));
    assert_eq!(traj.lines().next(), Some("n,x,y,v,a"));
    assert_eq!(traj.lines().count(), 7);

    let o = secrel(&["validate", "--solution", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = secrel(&[
        "validate",
        "--solution",
        out.join("trajectory.csv").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    // slow one slot down below v_min
    let mut lines: Vec<String> = traj.lines().map(str::to_string).collect();
    let mut cells: Vec<String> = lines[3].split(',').map(str::to_string).collect();
    cells[3] = "1.00000000e-1".into();
    lines[3] = cells.join(",");
    fs::write(out.join("trajectory.csv"), lines.join("\n") + "\n").unwrap();
    let o = secrel(&["validate", "--solution", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("speed below v_min at slot 3"), "{err}");
}

#[test]
fn invalid_config_is_a_validation_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"altitude_H": -5}"#);
    let o = secrel(&[
        "optimize",
        "--config",
        &cfg,
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("altitude_H"));

    let cfg = write_config(tmp.path(), "{\n \"slots\": 5\n}");
    let o = secrel(&[
        "baseline",
        "--config",
        &cfg,
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_64() {
    assert_eq!(code(&secrel(&[])), 64);
    assert_eq!(code(&secrel(&["frobnicate"])), 64);
    assert_eq!(code(&secrel(&["optimize"])), 64);
    assert_eq!(
        code(&secrel(&[
            "sweep", "--param", "altitude", "--values", "1", "--out", "x"
        ])),
        64
    );
    let o = secrel(&["--help"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("optimize"));

    let tmp = tempfile::tempdir().unwrap();
    let o = secrel_env(
        &["baseline", "--out", tmp.path().to_str().unwrap()],
        &[("SECREL_SEED", "abc")],
    );
    assert_eq!(code(&o), 64);
}

#[test]
fn infeasible_horizon_is_a_solver_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"horizon_T": 5.0}"#);
    let o = secrel(&[
        "optimize",
        "--config",
        &cfg,
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("minimum horizon"), "{}", stderr(&o));
}

#[test]
fn baseline_exports_a_valid_solution() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out = tmp.path().join("b");
    let o = secrel(&["baseline", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = secrel(&["validate", "--solution", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn sweep_runs_every_radius() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out = tmp.path().join("s");
    let o = secrel(&[
        "sweep",
        "--config",
        &cfg,
        "--param",
        "R",
        "--values",
        "0,20",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("0,"));
    assert!(rows[2].starts_with("20,"));
    for r in ["radius_0", "radius_20"] {
        let o = secrel(&["validate", "--solution", out.join(r).to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
}

#[test]
fn oracle_runs_on_three_slots() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"slots_N": 3, "horizon_T": 6.0, "bs_pos": [60.0, 0.0],
            "adversaries": [{"est_pos": [-150.0, 0.0], "radius_R": 30.0}]}"#,
    );
    let o = secrel(&["oracle", "--config", &cfg]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("oracle EE"));

    let o = secrel(&["oracle", "--config", &cfg, "--budget", "10"]);
    assert_eq!(code(&o), 2);
}
