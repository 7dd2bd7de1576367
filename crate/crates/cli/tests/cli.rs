use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn hmvp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hmvp"))
        .args(args)
        .arg("--out-dir")
        .arg(dir)
        .env_remove("HMVP_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn manifest(dir: &Path, command: &str) -> Value {
    let text = fs::read_to_string(dir.join(format!("{command}.manifest.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn json(dir: &Path, name: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join(name)).unwrap()).unwrap()
}

const SOLVE_BASE: &str = "n = 1\np = 2\neps = 0.2\ndomain_radius = 0.4\ncollar = 0.2\nT = 0.08\n";

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.display().to_string()
}

#[test]
fn constants_table() {
    let d = tempfile::tempdir().unwrap();
    let o = hmvp(d.path(), &["constants", "--n", "1", "--p", "2,4,inf"]);
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(d.path().join("constants.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "n,p,M,alpha,beta");
    assert_eq!(rows.len(), 4);
    let m: f64 = rows[1].split(',').nth(2).unwrap().parse().unwrap();
    assert!((m - std::f64::consts::PI / 12.0).abs() < 1e-16);
    assert!(rows[3].starts_with("1,inf,"));

    let o = hmvp(d.path(), &["constants", "--n", "2"]);
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(d.path().join("constants.csv")).unwrap();
    let m: f64 = csv.lines().nth(1).unwrap().split(',').nth(2).unwrap().parse().unwrap();
    assert!((m - 1.0 / (2.0 * std::f64::consts::PI)).abs() < 1e-16);

    let o = hmvp(d.path(), &["constants", "--n", "0"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("at least 1"));
    assert_eq!(manifest(d.path(), "constants")["exit_code"], 2);
}

#[test]
fn moments_reports() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&hmvp(d.path(), &["moments", "--n", "1", "--eps", "0.5"])), 0);
    assert_eq!(json(d.path(), "moments.json")["passed"], true);
    assert_eq!(code(&hmvp(d.path(), &["moments", "--n", "3", "--eps", "1"])), 0);
    let r = json(d.path(), "moments.json");
    let m = r["report"]["M_closed_form"].as_f64().unwrap();
    for v in r["report"]["diagonal_moments"].as_array().unwrap() {
        assert!((v.as_f64().unwrap() / m - 1.0).abs() < 1e-5);
    }
    assert_eq!(code(&hmvp(d.path(), &["moments", "--n", "1", "--resolution", "1,1,1"])), 2);
    // A coarse rule misses the tolerance: the checks run and fail.
    assert_eq!(
        code(&hmvp(d.path(), &["moments", "--n", "3", "--resolution", "3,3,2", "--rel-tol", "1e-9"])),
        1
    );
}

#[test]
fn expansion_runs() {
    let d = tempfile::tempdir().unwrap();
    let o = hmvp(d.path(), &["expand", "--field", "quartic-heat", "--p", "2", "--at", "1,0,0,0"]);
    assert_eq!(code(&o), 0);
    let order = json(d.path(), "expand.json")["study"]["report"]["fitted_order"].as_f64().unwrap();
    assert!((order - 4.0).abs() < 0.1, "{order}");
    let csv = fs::read_to_string(d.path().join("expand.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);

    assert_eq!(code(&hmvp(d.path(), &["expand", "--field", "x1", "--p", "inf"])), 0);
    let r = json(d.path(), "expand.json");
    assert!(r["study"]["points"]
        .as_array()
        .unwrap()
        .iter()
        .all(|p| p["residual"].as_f64().unwrap().abs() < 1e-12));

    assert_eq!(
        code(&hmvp(d.path(), &["expand", "--field", "x1sq", "--p", "4", "--at", "0,0.5,0,0"])),
        0
    );
    assert_eq!(code(&hmvp(d.path(), &["expand", "--field", "x1*x2 - t", "--p", "3", "--at", "0.5,0.2,-0.1,0.3"])), 0);
    assert_eq!(code(&hmvp(d.path(), &["expand", "--field", "nope"])), 2);
    assert_eq!(code(&hmvp(d.path(), &["expand", "--field", "x1", "--at", "0,1"])), 2);
}

#[test]
fn counterexample_passes() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&hmvp(d.path(), &["counterexample"])), 0);
    let r = json(d.path(), "counterexample.json");
    assert_eq!(r["passed"], true);
    let m = manifest(d.path(), "counterexample");
    assert_eq!(m["outputs"].as_array().unwrap().len(), 2);
    assert!(m["wall_time"].as_f64().unwrap() >= 0.0);
    assert_eq!(m["tool_version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn solve_constant_data() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), "c.cfg", &format!("{SOLVE_BASE}data = const\noutput = all\n"));
    assert_eq!(code(&hmvp(d.path(), &["solve", &cfg])), 0);
    let csv = fs::read_to_string(d.path().join("solution.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "k,t,x1,x2,x3,value,provenance");
    for line in lines {
        let value = line.split(',').nth(5).unwrap();
        assert_eq!(value, "1.0000000000000000e0");
    }
}

#[test]
fn solve_errors_map_to_exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let no_collar = SOLVE_BASE.replace("collar = 0.2\n", "");
    let cfg = write_config(d.path(), "a.cfg", &format!("{no_collar}data = const\n"));
    let o = hmvp(d.path(), &["solve", &cfg]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("invalid grid"));

    let cfg = write_config(d.path(), "b.cfg", &format!("{SOLVE_BASE}data = const\ncolour = red\n"));
    assert_eq!(code(&hmvp(d.path(), &["solve", &cfg])), 2);

    let cfg = write_config(
        d.path(),
        "c.cfg",
        &format!("{SOLVE_BASE}data = heat-reference\nmax_inner_iters = 1\n"),
    );
    let o = hmvp(d.path(), &["solve", &cfg]);
    assert_eq!(code(&o), 3);
    assert!(manifest(d.path(), "solve")["error"].as_str().unwrap().contains("did not converge"));
}

#[test]
fn reference_error_decreases_with_eps() {
    let d = tempfile::tempdir().unwrap();
    let mut errs = Vec::new();
    for eps in ["0.2", "0.1"] {
        let body = format!(
            "n = 1\np = 2\neps = {eps}\ndomain_radius = 1\ncollar = {eps}\nT = 0.2\ndata = heat-reference\nreference = heat-reference\noutput = none\n"
        );
        let cfg = write_config(d.path(), "r.cfg", &body);
        assert_eq!(code(&hmvp(d.path(), &["solve", &cfg])), 0);
        errs.push(json(d.path(), "solve.json")["max_error"].as_f64().unwrap());
    }
    assert!(errs[1] < errs[0], "{errs:?}");
}

#[test]
fn reruns_are_identical_and_threads_are_validated() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let cfg = write_config(
        d1.path(),
        "c.cfg",
        &format!("{}data = trig\noutput = all\n", SOLVE_BASE.replace("p = 2", "p = inf")),
    );
    assert_eq!(code(&hmvp(d1.path(), &["solve", &cfg, "--threads", "1"])), 0);
    assert_eq!(code(&hmvp(d2.path(), &["solve", &cfg, "--threads", "1"])), 0);
    let a = fs::read(d1.path().join("solution.csv")).unwrap();
    let b = fs::read(d2.path().join("solution.csv")).unwrap();
    assert_eq!(a, b);
    assert_eq!(manifest(d1.path(), "solve")["parameters"]["threads"], "1");

    let o = Command::new(env!("CARGO_BIN_EXE_hmvp"))
        .args(["constants", "--out-dir"])
        .arg(d1.path())
        .env("HMVP_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}
