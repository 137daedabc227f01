use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_renege-ldp"));
    c.env_remove("RENEGE_LDP_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok_json(args: &[&str]) -> Value {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn err_json(out: &Output, code: i32) -> Value {
    assert_eq!(out.status.code(), Some(code), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(v["exit_code"], code);
    v
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn decay_rate_example() {
    let v = ok_json(&["decay-rate", "--lambda", "2", "--mu", "1", "--gamma", "2"]);
    let z = 3f64.sqrt() - 1.0;
    let c = 2.0 * (1.0 - 1.0 / z) + (1.0 - z) - 2.0 * z.ln();
    assert!((v["result"]["c_gamma"].as_f64().unwrap() - c).abs() < 1e-14);
    assert!((v["result"]["z_gamma"].as_f64().unwrap() - 0.7320508).abs() < 1e-7);
    assert_eq!(v["config"]["lambda"], 2.0);
    assert_eq!(v["command"], "decay-rate");
}

#[test]
fn minimizer_terminal_reneging() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let v = ok_json(&[
        "minimizer", "--lambda", "2", "--mu", "1", "--theta", "1", "--x0", "1", "--gamma", "2", "--T", "10", "--out-dir", out,
    ]);
    let csv = std::fs::read_to_string(dir.path().join("minimizer.csv")).unwrap();
    assert!(csv.starts_with("t,xi,zeta,phi1,phi2,phi3\n"));
    let last: Vec<f64> = csv.lines().last().unwrap().split(',').map(|s| s.parse().unwrap()).collect();
    assert_eq!(last[0], 10.0);
    assert!((last[2] - 20.0).abs() / 20.0 < 1e-7);
    assert!((last[3] - 1.0).abs() < 1e-12);
    assert!((v["result"]["cost"]["total"].as_f64().unwrap() - 1.8132801763644453).abs() < 1e-9);
    let report: Value = serde_json::from_slice(&std::fs::read(dir.path().join("minimizer_report.json")).unwrap()).unwrap();
    assert_eq!(report["cost"], v["result"]["cost"]);
    let summary = std::fs::read(dir.path().join("summary.json")).unwrap();
    assert_eq!(serde_json::from_slice::<Value>(&summary).unwrap(), v);
}

#[test]
fn paradox_check_shares_decay_rate() {
    let v = ok_json(&["paradox-check", "--lambda", "2", "--mu", "1", "--gamma", "2", "--T", "200", "--thetas", "0.5,1,2"]);
    let r = &v["result"];
    assert_eq!(r["c_gamma_bit_identical"], true);
    let rows = r["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    let norm: Vec<f64> = rows.iter().map(|x| x["normalized"].as_f64().unwrap()).collect();
    let spread = norm.iter().cloned().fold(f64::MIN, f64::max) / norm.iter().cloned().fold(f64::MAX, f64::min) - 1.0;
    assert!((spread - r["max_pairwise_spread"].as_f64().unwrap()).abs() < 1e-15);
    assert_eq!(r["within_one_percent"], spread <= 0.01);
    // 3 thetas x 4 default horizons; reneging share falls with T for each theta
    let decay = r["reneging_decay"].as_array().unwrap();
    assert_eq!(decay.len(), 12);
    for chunk in decay.chunks(4) {
        let shares: Vec<f64> = chunk.iter().map(|x| x["reneging_share"].as_f64().unwrap()).collect();
        assert!(shares.windows(2).all(|w| w[1] < w[0]), "{shares:?}");
    }
}

#[test]
fn identical_config_gives_identical_files() {
    let cases: [&[&str]; 4] = [
        &["simulate", "--lambda", "2", "--mu", "1", "--T", "3", "--n", "50", "--seed", "9", "--gamma", "2"],
        &["estimate", "--lambda", "2", "--mu", "1", "--T", "2", "--gamma", "2", "--n", "5", "--replications", "2000"],
        &["sweep", "--lambda", "2", "--mu", "1", "--T", "2", "--gamma", "2", "--n-list", "2,4", "--replications", "500", "--format", "json"],
        &["fluid", "--lambda", "2", "--mu", "1", "--T", "2", "--mode", "many", "--x0", "1.5"],
    ];
    for args in cases {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let mut full = args.to_vec();
        full.extend(["--out-dir", out.to_str().unwrap()]);
        let oa = run(&full);
        assert!(oa.status.success());
        let fa = read_dir_sorted(&out);
        assert!(fa.len() >= 2);
        std::fs::remove_dir_all(&out).unwrap();
        let ob = bin().args(&full).env("RENEGE_LDP_THREADS", "1").output().unwrap();
        assert!(ob.status.success());
        assert_eq!(oa.stdout, ob.stdout);
        assert_eq!(fa, read_dir_sorted(&out));
    }
}

#[test]
fn config_file_merges_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"lambda": 2, "mu": 1, "gamma": 1, "T": 10, "n": 7}"#).unwrap();
    let v = ok_json(&["decay-rate", "--config", cfg.to_str().unwrap(), "--gamma", "2"]);
    assert_eq!(v["config"]["gamma"], 2.0);
    assert_eq!(v["config"]["lambda"], 2.0);
    // keys irrelevant to the command are dropped from the echo
    assert!(v["config"].get("n").is_none());
    let v1 = ok_json(&["decay-rate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(v1["result"]["c_gamma"], 0.0);

    std::fs::write(&cfg, r#"{"lambda": 2, "mu": 1, "gamma": 1, "bogus": 3}"#).unwrap();
    let e = err_json(&run(&["decay-rate", "--config", cfg.to_str().unwrap()]), 2);
    assert_eq!(e["error"], "ConfigInvalid");
    let e = err_json(&run(&["decay-rate", "--config", dir.path().join("missing.json").to_str().unwrap()]), 2);
    assert!(e["message"].as_str().unwrap().contains("cannot read"));
}

#[test]
fn config_errors_exit_two() {
    let e = err_json(&run(&["decay-rate", "--lambda", "2"]), 2);
    assert!(e["message"].as_str().unwrap().contains("mu"));
    err_json(&run(&["fluid", "--lambda", "2", "--mu", "1", "--T", "5", "--gamma", "1"]), 2);
    err_json(&run(&["decay-rate", "--lambda", "2", "--mu", "1", "--gamma", "x"]), 2);
    err_json(&run(&["no-such-command"]), 2);
    let e = err_json(&run(&["decay-rate", "--lambda", "-2", "--mu", "1", "--gamma", "1"]), 2);
    assert_eq!(e["variant"], "RateNonpositive");
    let e = err_json(&run(&["minimizer", "--lambda", "1", "--mu", "2", "--gamma", "1", "--T", "5"]), 2);
    assert_eq!(e["variant"], "LambdaLessThanMu");
    let e = bin()
        .args(["decay-rate", "--lambda", "2", "--mu", "1", "--gamma", "1"])
        .env("RENEGE_LDP_THREADS", "zero")
        .output()
        .unwrap();
    err_json(&e, 2);
}

#[test]
fn numerics_errors_exit_three() {
    let e = err_json(
        &run(&["oracle", "--lambda", "2", "--mu", "1", "--gamma", "2", "--T", "10", "--m-list", "20,40", "--max-iters", "5"]),
        3,
    );
    assert_eq!(e["error"], "NumericsFailed");
    assert_eq!(e["variant"], "NotConverged");
}

#[test]
fn help_and_version_exit_zero() {
    for flag in ["--help", "--version"] {
        let out = run(&[flag]);
        assert!(out.status.success());
        assert!(!out.stdout.is_empty());
    }
}

#[test]
fn oracle_refinement_table() {
    let dir = tempfile::tempdir().unwrap();
    let v = ok_json(&[
        "oracle", "--lambda", "2", "--mu", "1", "--gamma", "2", "--T", "10", "--m-list", "20,40,80", "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(v["result"]["monotone"], true);
    let csv = std::fs::read_to_string(dir.path().join("refinement.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    for row in v["result"]["rows"].as_array().unwrap() {
        assert!(row["gap"].as_f64().unwrap() > 0.0);
    }
}

#[test]
fn naive_and_is_estimates_agree() {
    let base = ["estimate", "--lambda", "2", "--mu", "1", "--T", "2", "--gamma", "1.8", "--n", "4", "--replications", "40000"];
    let mut naive = base.to_vec();
    naive.extend(["--method", "naive"]);
    let a = ok_json(&naive)["result"]["estimate"].clone();
    let b = ok_json(&base)["result"]["estimate"].clone();
    let (pa, ca) = (a["p_hat"].as_f64().unwrap(), a["ci95"].as_f64().unwrap());
    let (pb, cb) = (b["p_hat"].as_f64().unwrap(), b["ci95"].as_f64().unwrap());
    assert!(pa > 0.0 && pb > 0.0);
    assert!((pa - pb).abs() <= ca + cb, "{pa} ± {ca} vs {pb} ± {cb}");
    assert!(a["ess"].is_null());
    assert!(b["ess"].as_f64().unwrap() > 0.0);
}
