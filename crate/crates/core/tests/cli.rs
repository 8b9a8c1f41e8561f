use std::process::{Command, Output};

use elliptic_kappa::finite_n_jdf::jdf_q;
use elliptic_kappa::prt_kernels::EnsembleParams;
use elliptic_kappa::scaling_limits::{weak_jdf, WeakPoint};

fn ekappa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ekappa")).args(args).output().unwrap()
}

fn stdout(args: &[&str]) -> String {
    let out = ekappa(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Numeric rows of a CSV table, header dropped.
fn rows(text: &str) -> Vec<Vec<f64>> {
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

fn single_value(args: &[&str]) -> f64 {
    let r = rows(&stdout(args));
    assert_eq!(r.len(), 1);
    *r[0].last().unwrap()
}

#[test]
fn jdf_at_the_origin() {
    let v = single_value(&["jdf", "--n", "2", "--tau", "0.5", "--z", "0", "--q", "1"]);
    assert!((v - 0.0705).abs() < 5e-5, "{v}");
}

#[test]
fn jdf_t_and_q_forms_agree_at_tau_zero() {
    let q = single_value(&["jdf", "--n", "2", "--tau", "0", "--z", "0", "--q", "1"]);
    let t = single_value(&["jdf", "--n", "2", "--tau", "0", "--z", "0", "--t", "1"]);
    assert_eq!(q, t);
}

#[test]
fn jdf_matches_library_exactly() {
    let v = single_value(&["jdf", "--n", "4", "--tau", "0.9", "--z", "1", "--q", "0.3"]);
    let lib = jdf_q(EnsembleParams::new(4, 0.9).unwrap(), 1.0, 0.3).unwrap();
    assert_eq!(v.to_bits(), lib.to_bits());
}

#[test]
fn jdf_grid_sweeps_the_lattice() {
    let r = rows(&stdout(&["jdf", "--n", "6", "--tau", "0.3", "--z", "-1:1:3", "--q", "0.5,2"]));
    assert_eq!(r.len(), 6);
    assert_eq!(r[0][0], -1.0);
    assert_eq!(r[5][..2], [1.0, 2.0]);
    let params = EnsembleParams::new(6, 0.3).unwrap();
    for row in &r {
        assert_eq!(row[3], jdf_q(params, row[0], row[1]).unwrap());
        assert_eq!(row[2], row[1] * 0.7);
    }
}

#[test]
fn json_output_carries_the_same_numbers() {
    let args = ["jdf", "--n", "4", "--tau", "0.9", "--z", "1", "--q", "0.3"];
    let csv = single_value(&args);
    let json: serde_json::Value =
        serde_json::from_str(&stdout(&[&args[..], &["--format", "json"]].concat())).unwrap();
    assert_eq!(json[0]["density"].as_f64().unwrap(), csv);
}

#[test]
fn density_at_the_origin() {
    let v = single_value(&["density", "--n", "2", "--tau", "0.5", "--z-grid", "0"]);
    assert!((v - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-14);
}

#[test]
fn unit_normalization_integrates_to_one() {
    let r = rows(&stdout(&["density", "--n", "4", "--tau", "0.5", "--z-grid", "-6:6:241", "--normalize", "unit"]));
    let mass: f64 = r.windows(2).map(|w| 0.5 * (w[1][0] - w[0][0]) * (w[0][1] + w[1][1])).sum();
    assert!((mass - 1.0).abs() < 1e-6, "{mass}");
}

#[test]
fn odd_n_density_is_unsupported() {
    let out = ekappa(&["density", "--n", "3", "--tau", "0.5", "--z-grid", "0"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("unsupported") && err.contains("odd") || err.contains("even N only"), "{err}");
}

#[test]
fn invalid_parameters_name_the_precondition() {
    let out = ekappa(&["jdf", "--n", "4", "--tau", "1.5", "--z", "0", "--q", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tau"));
    let out = ekappa(&["jdf", "--n", "4", "--tau", "0.5", "--z", "0", "--q", "-1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = ekappa(&["limit", "--regime", "weak", "--z", "0", "--t", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn limit_laws() {
    let bulk = single_value(&["limit", "--regime", "bulk", "--tau", "0", "--z", "0", "--t", "1"]);
    assert!((bulk - 0.120985).abs() < 1e-6, "{bulk}");
    let edge = single_value(&["limit", "--regime", "edge", "--tau", "0", "--delta", "0", "--sigma", "1"]);
    assert!((edge - 0.139650).abs() < 1e-6, "{edge}");
    let weak = single_value(&["limit", "--regime", "weak", "--a", "1", "--z", "0", "--t", "1"]);
    assert_eq!(weak, weak_jdf(WeakPoint::new(1.0, 0.0, 1.0).unwrap()));
}

#[test]
fn repeated_invocations_are_byte_identical() {
    let args = ["limit", "--regime", "edge", "--tau", "0.3", "--delta", "-2:2:5", "--sigma", "0.1,1,10"];
    assert_eq!(ekappa(&args).stdout, ekappa(&args).stdout);
}

fn digest(workers: &str) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_ekappa"))
        .args(["experiment", "--n", "7", "--tau", "0.4", "--matrices", "300", "--seed", "11"])
        .args(["--z-bins", "lin:-6:6:12", "--t-bins", "log:0.001:1000:12"])
        .env("EKAPPA_WORKERS", workers)
        .output()
        .unwrap();
    assert!(out.status.success());
    String::from_utf8(out.stdout).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn histogram_does_not_depend_on_worker_count() {
    assert_eq!(digest("1"), digest("8"));
}

#[test]
fn bundled_fig2_config_passes_and_persists() {
    let dir = tempfile::tempdir().unwrap();
    let config = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/fig2_left_desk.json");
    let text = stdout(&["experiment", "--config", config, "--out", dir.path().to_str().unwrap()]);
    assert!(text.contains("result PASS"), "{text}");
    for f in ["histogram.json", "histogram.csv", "report.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let h = elliptic_kappa::mc_harness::JointHistogram::load(dir.path()).unwrap();
    assert!(text.starts_with(&format!("digest {}", h.digest())));
}

#[test]
fn failed_comparison_exits_with_statistical_code() {
    // at N = 4 the bulk limit law is far from the sampled law
    let out = ekappa(&[
        "experiment", "--n", "4", "--tau", "0.5", "--matrices", "20000", "--seed", "2",
        "--scaling", "bulk", "--z-bins", "lin:-1:1:8", "--t-bins", "log:0.01:10:6", "--model", "bulk_joint",
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("result FAIL"));
}

#[test]
fn selftest_quick_passes_and_canary_fails() {
    let out = ekappa(&["selftest", "--quick"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let out = ekappa(&["selftest", "--quick", "--perturb", "1e-3"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}
