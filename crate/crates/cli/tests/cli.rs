use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mcd_core::density::ModelSpec;
use mcd_core::linalg::PdsMatrix;
use mcd_core::montecarlo::sample_elliptical;
use nalgebra::{DMatrix, DVector};
use serde_json::Value;
use tempfile::TempDir;

fn mcd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcd")).args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("valid JSON")
}

fn assert_schema(name: &str, value: &Value) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas").join(name);
    let schema: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(value).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{name}: {errors:?}");
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

fn gaussian_csv(dir: &TempDir, name: &str, n: usize, seed: u64) -> PathBuf {
    let sigma = PdsMatrix::from_matrix(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap();
    let s = sample_elliptical(&ModelSpec::Gaussian, &DVector::from_vec(vec![1.0, -1.0]), &sigma, n, seed).unwrap();
    let text: String = s.rows().map(|r| format!("{},{}\n", r[0], r[1])).collect();
    write(dir, name, &text)
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

#[test]
fn estimate_four_points_exact() {
    let dir = TempDir::new().unwrap();
    let p = write(&dir, "x.csv", "0\n1\n2\n10\n");
    let v = stdout_json(&mcd(&["estimate", p.to_str().unwrap(), "--gamma", "0.75", "--exact"]));
    assert_schema("estimate.json", &v);
    assert_eq!(v["subset"], serde_json::json!([0, 1, 2]));
    assert_eq!(v["method"], "exact");
    assert!((v["scatter"][0][0].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(v["location"][0].as_f64().unwrap(), 1.0);
}

#[test]
fn estimate_header_and_output_file() {
    let dir = TempDir::new().unwrap();
    let p = write(&dir, "x.csv", "value\n0\n1\n2\n10\n");
    let out = dir.path().join("fit.json");
    let run = mcd(&["estimate", p.to_str().unwrap(), "--header", "--out", out.to_str().unwrap()]);
    assert!(run.status.success());
    assert!(run.stdout.is_empty());
    let v: Value = serde_json::from_str(&fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(v["n"], 4);
}

#[test]
fn estimate_is_reproducible_with_cstep() {
    let dir = TempDir::new().unwrap();
    let p = gaussian_csv(&dir, "g.csv", 80, 3);
    let args = ["estimate", p.to_str().unwrap(), "--seed", "11", "--restarts", "20"];
    let a = mcd(&args);
    let b = mcd(&args);
    let v = stdout_json(&a);
    assert_eq!(v["method"], "cstep");
    assert_schema("estimate.json", &v);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn estimate_error_codes() {
    let dir = TempDir::new().unwrap();
    let small = write(&dir, "small.csv", "1,2\n3,4\n5,7\n0,1\n");
    assert_eq!(code(&mcd(&["estimate", small.to_str().unwrap()])), 1);

    let bad = write(&dir, "bad.csv", "1,2\n3,4\n5,oops\n");
    let out = mcd(&["estimate", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    let missing = dir.path().join("missing.csv");
    assert_eq!(code(&mcd(&["estimate", missing.to_str().unwrap()])), 2);

    let flat = write(&dir, "flat.csv", &"5\n".repeat(8));
    assert_eq!(code(&mcd(&["estimate", flat.to_str().unwrap(), "--exact"])), 3);

    let big = gaussian_csv(&dir, "big.csv", 80, 1);
    assert_eq!(code(&mcd(&["estimate", big.to_str().unwrap(), "--exact"])), 4);

    assert_eq!(code(&mcd(&["estimate", big.to_str().unwrap(), "--gamma", "1.5"])), 1);
    assert_eq!(code(&mcd(&["estimate", "--no-such-flag"])), 1);
}

#[test]
fn theory_gaussian_constants() {
    let v = stdout_json(&mcd(&["theory", "--model", "gaussian", "--k", "2", "--gamma", "0.5"]));
    assert_schema("theory.json", &v);
    let r = v["r"].as_f64().unwrap();
    let a = v["alpha"].as_f64().unwrap();
    assert!((r - 1.177410).abs() < 1e-6);
    assert!((a * a - 0.306853).abs() < 1e-6);
}

#[test]
fn theory_student_sign_invariants() {
    let v = stdout_json(&mcd(&["theory", "--model", "student_t", "--nu", "5", "--gamma", "0.75"]));
    assert_schema("theory.json", &v);
    let f = |key: &str| v[key].as_f64().unwrap();
    assert!(f("beta1") < 0.0 && f("beta2") < 0.0 && f("beta6") > 0.0);
    assert!(f("tau") > 0.0 && f("sigma1") > 0.0 && f("sigma_rho_sq") > 0.0);
    let paren = stdout_json(&mcd(&["theory", "--model", "student_t(5)", "--gamma", "0.75"]));
    assert_eq!(v, paren);
}

#[test]
fn theory_error_codes() {
    assert_eq!(code(&mcd(&["theory", "--model", "cauchy"])), 5);
    assert_eq!(code(&mcd(&["theory", "--gamma", "1.0"])), 1);
    assert_eq!(code(&mcd(&["theory", "--model", "uniform_ball"])), 6);
}

#[test]
fn variance_kde_and_model_density() {
    let dir = TempDir::new().unwrap();
    let p = gaussian_csv(&dir, "g.csv", 400, 9);
    let kde = stdout_json(&mcd(&["variance", p.to_str().unwrap(), "--restarts", "10"]));
    assert_schema("variance.json", &kde);
    assert_eq!(kde["density"], "kde");
    assert_eq!(kde["labels"].as_array().unwrap().len(), 6);
    assert_eq!(kde["bandwidths"].as_array().unwrap().len(), 2);

    let oracle = stdout_json(&mcd(&["variance", p.to_str().unwrap(), "--restarts", "10", "--density", "gaussian"]));
    assert_schema("variance.json", &oracle);
    assert_eq!(oracle["density"], "gaussian");
    assert!(oracle.get("bandwidths").is_none());
    let cov = oracle["covariance"].as_array().unwrap();
    for i in 0..6 {
        assert!(cov[i][i].as_f64().unwrap() > 0.0);
    }

    assert_eq!(code(&mcd(&["variance", p.to_str().unwrap(), "--bandwidth", "-1"])), 1);
    assert_eq!(code(&mcd(&["variance", p.to_str().unwrap(), "--density", "nonsense"])), 5);
}

#[test]
fn influence_table() {
    let theory = stdout_json(&mcd(&["theory", "--gamma", "0.5"]));
    let r = theory["r"].as_f64().unwrap();
    let out = mcd(&["influence", "--gamma", "0.5", "--points", "31"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "norm,if_mu_norm,if_sigma_11,if_sigma_12,if_sigma_22,if_rho");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    // grid point 10 of 30 lies on the boundary and is skipped
    assert_eq!(rows.len(), 30);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    let f = |key: &str| theory[key].as_f64().unwrap();
    assert!((rows[0][5] - (f("lambda2") + f("lambda3"))).abs() < 1e-12);
    let outside: Vec<&Vec<f64>> = rows.iter().filter(|row| row[0] > r).collect();
    for row in &outside {
        assert_eq!(row[1..], outside[0][1..]);
    }
    // jump in the diagonal across the boundary: (kappa1 + kappa2 r^2) + kappa3 r^2 / k
    let inside = rows.iter().rfind(|row| row[0] < r).unwrap();
    let t = inside[0];
    let left = f("kappa1") + f("kappa2") * t * t + f("kappa3") * t * t / 2.0 + f("kappa4");
    assert!((inside[2] - left).abs() < 1e-12);
    assert!((outside[0][2] - f("kappa4")).abs() < 1e-12);
}

#[test]
fn simulate_clt_is_deterministic_and_dumps_reps() {
    let dir = TempDir::new().unwrap();
    let reps = dir.path().join("reps.csv");
    let args = [
        "simulate", "--check", "clt", "--n", "60", "--reps", "8", "--seed", "7", "--restarts", "3",
        "--dump-reps", reps.to_str().unwrap(),
    ];
    let a = mcd(&args);
    let b = mcd(&args);
    let v = stdout_json(&a);
    assert_schema("simulate.json", &v);
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(v["replications"].as_array().unwrap().len() + v["failures"].as_u64().unwrap() as usize, 8);
    let csv = fs::read_to_string(reps).unwrap();
    assert!(csv.starts_with("rep,muhat_1,muhat_2,sigmahat_11,sigmahat_12,sigmahat_22,rhohat\n"));
}

#[test]
fn simulate_expansion_and_plugin() {
    let e = stdout_json(&mcd(&[
        "simulate", "--check", "expansion", "--ladder", "40,80", "--reps", "4", "--restarts", "2",
    ]));
    assert_schema("simulate.json", &e);
    assert_eq!(e["expansion"]["rungs"].as_array().unwrap().len(), 2);

    let p = stdout_json(&mcd(&[
        "simulate", "--check", "plugin", "--n", "100", "--reps", "3", "--density", "oracle", "--restarts", "2",
    ]));
    assert_schema("simulate.json", &p);
    assert_eq!(p["plugin"]["density"], "oracle");

    let x = stdout_json(&mcd(&["simulate", "--check", "clt", "--n", "12", "--reps", "3", "--estimator", "exact"]));
    assert_eq!(x["estimator"], "exact");
}

#[test]
fn simulate_error_codes() {
    assert_eq!(code(&mcd(&["simulate", "--check", "clt", "--gamma", "1.2", "--reps", "2"])), 1);
    assert_eq!(code(&mcd(&["simulate", "--check", "clt", "--n", "5"])), 1);
    assert_eq!(code(&mcd(&["simulate", "--check", "clt", "--model", "nope"])), 5);
    assert_eq!(code(&mcd(&["simulate", "--check", "bogus"])), 1);
}
