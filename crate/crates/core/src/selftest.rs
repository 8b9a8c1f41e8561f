//! Built-in consistency suites behind `ekappa selftest`.

use std::time::Instant;

use serde::Serialize;

use crate::ensemble_sampler::{overlaps_via_eigvecs, real_eig_overlaps, sample_matrix, MeasureOptions};
use crate::error::Result;
use crate::finite_n_jdf::{fn_density, marginal_density};
use crate::logval::SignedLogValue;
use crate::mc_harness::{run_experiment, BinEdges, ExperimentConfig, Scaling, TauSpec};
use crate::prt_kernels::{identity_residual, prt_eval, EnsembleParams};
use crate::scaling_limits::{weak_jdf, weak_jdf_by_parts, WeakPoint};
use crate::specfun::upper_incomplete_gamma;

/// What to run.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SelftestOptions {
    /// Only the kernel identity and the `tau -> 0` reduction.
    pub quick: bool,
    /// Relative error injected into the closed-form reference values. A
    /// canary: any value above the suite tolerance must make the run fail.
    pub perturbation: f64,
}

/// Result of one suite.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub checks: usize,
    /// Largest measured discrepancy.
    pub worst: f64,
    pub tolerance: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelftestReport {
    pub suites: Vec<SuiteOutcome>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }
}

struct Tally {
    checks: usize,
    worst: f64,
}

impl Tally {
    fn new() -> Self {
        Self { checks: 0, worst: 0.0 }
    }

    fn add(&mut self, err: f64) {
        self.checks += 1;
        // NaN counts as a failure
        self.worst = if err.is_nan() { f64::INFINITY } else { self.worst.max(err) };
    }
}

fn suite(name: &'static str, tolerance: f64, body: impl FnOnce(&mut Tally) -> Result<()>) -> Result<SuiteOutcome> {
    let start = Instant::now();
    let mut tally = Tally::new();
    body(&mut tally)?;
    Ok(SuiteOutcome {
        name,
        passed: tally.worst <= tolerance,
        checks: tally.checks,
        worst: tally.worst,
        tolerance,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn grid(lo: f64, hi: f64, points: usize) -> impl Iterator<Item = f64> {
    (0..points).map(move |i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
}

fn rel(a: SignedLogValue, b: SignedLogValue) -> f64 {
    let scale = a.log_abs().max(b.log_abs());
    (a - b).to_f64_scaled(scale).abs()
}

/// Kernel identity on `N = 3..=40`, three values of tau, 21 points of
/// `[-2 sqrt(N), 2 sqrt(N)]`.
pub fn identity_suite() -> Result<SuiteOutcome> {
    suite("kernel identity", 1e-10, |tally| {
        for n in 3..=40 {
            for &tau in &[0.1, 0.5, 0.9] {
                let params = EnsembleParams::new(n, tau)?;
                let r = 2.0 * (n as f64).sqrt();
                for z in grid(-r, r, 21) {
                    tally.add(identity_residual(params, z)?);
                }
            }
        }
        Ok(())
    })
}

/// Kernels at `tau = 1e-6` against the incomplete-gamma closed forms.
pub fn tau_zero_suite(perturbation: f64) -> Result<SuiteOutcome> {
    suite("tau -> 0 reduction", 1e-4, |tally| {
        let params = EnsembleParams::new(30, 1e-6)?;
        let factor = 1.0 + perturbation;
        for z in grid(-5.0, 5.0, 21) {
            let orders: Vec<i64> = (0..=30).collect();
            let bundle = prt_eval(params, z, &orders)?;
            let z2 = z * z;
            let p_exact = |m: i64| -> Result<SignedLogValue> {
                if m < 0 {
                    return Ok(SignedLogValue::ZERO);
                }
                Ok(upper_incomplete_gamma(m as u64, z2)?.mul_exp(z2).scale(factor))
            };
            for m in 1..=30i64 {
                let k = bundle.get(m);
                let p = p_exact(m)?;
                let r = SignedLogValue::from_f64(z) * p;
                let t = p_exact(m - 1)?.scale(m as f64 * z2);
                for (got, want) in [(k.p, p), (k.r, r), (k.t, t)] {
                    if want.is_zero() {
                        // compare on the scale of P where the exact value vanishes
                        tally.add(got.to_f64_scaled(p.log_abs()).abs());
                    } else {
                        tally.add(rel(got, want));
                    }
                }
            }
        }
        Ok(())
    })
}

/// Integrated joint density against the closed-form real density.
pub fn marginalization_suite() -> Result<SuiteOutcome> {
    suite("marginalization", 1e-6, |tally| {
        let tau = 0.9;
        for &n in &[2usize, 4, 10] {
            let params = EnsembleParams::new(n, tau)?;
            let r = 0.8 * (1.0 + tau) * (n as f64).sqrt();
            for z in grid(-r, r, 21) {
                let m = marginal_density(params, z)?;
                let f = fn_density(params, z)?;
                tally.add((m - f).abs() / f);
            }
        }
        Ok(())
    })
}

/// Schur route against the eigenvector route on random matrices.
pub fn route_suite() -> Result<SuiteOutcome> {
    suite("route equivalence", 1e-8, |tally| {
        for index in 0..100u64 {
            let n = 4 + (index % 27) as usize;
            let tau = 0.1 + 0.8 * (index % 7) as f64 / 6.0;
            let m = sample_matrix(n, tau, 77, index)?;
            let schur = real_eig_overlaps(&m, MeasureOptions::default())?;
            let mut a = schur.observations;
            let mut b = overlaps_via_eigvecs(&m)?;
            if schur.discards > 0 || a.len() != b.len() {
                tally.add(f64::INFINITY);
                continue;
            }
            a.sort_by(|x, y| x.lambda.total_cmp(&y.lambda));
            b.sort_by(|x, y| x.lambda.total_cmp(&y.lambda));
            for (x, y) in a.iter().zip(&b) {
                tally.add((x.t - y.t).abs() / x.t.max(1e-6));
                if x.kappa < 1.0 {
                    tally.add(f64::INFINITY);
                }
            }
        }
        Ok(())
    })
}

/// Two runs of the same experiment on different worker counts.
pub fn determinism_suite() -> Result<SuiteOutcome> {
    suite("determinism", 0.0, |tally| {
        let config = ExperimentConfig {
            n: 12,
            tau_spec: TauSpec::Fixed(0.6),
            num_matrices: 200,
            seed: 5,
            scaling: Scaling::Raw,
            z_bins: BinEdges::linear(-8.0, 8.0, 16)?,
            t_bins: BinEdges::log(1e-3, 1e3, 12)?,
            measure: MeasureOptions::default(),
            comparison: None,
        };
        let a = run_experiment(&config, 1)?;
        let b = run_experiment(&config, 3)?;
        tally.add(if a.digest() == b.digest() && a.is_conserved() { 0.0 } else { 1.0 });
        Ok(())
    })
}

/// Weak law against its integrated-by-parts form.
pub fn weak_forms_suite() -> Result<SuiteOutcome> {
    suite("weak-law forms", 1e-12, |tally| {
        for i in 0..100 {
            let a = 0.5 + 0.045 * i as f64;
            let z = -1.9 + 3.8 * ((i * 37) % 100) as f64 / 100.0;
            let t = 10f64.powf(-2.0 + 4.0 * ((i * 61) % 100) as f64 / 100.0);
            let p = WeakPoint::new(a, z, t)?;
            let (x, y) = (weak_jdf(p), weak_jdf_by_parts(p));
            tally.add((x - y).abs() / y.abs());
        }
        Ok(())
    })
}

/// Runs the selected suites in order.
pub fn run(opts: SelftestOptions) -> Result<SelftestReport> {
    let mut suites = vec![identity_suite()?, tau_zero_suite(opts.perturbation)?];
    if !opts.quick {
        suites.push(marginalization_suite()?);
        suites.push(route_suite()?);
        suites.push(determinism_suite()?);
        suites.push(weak_forms_suite()?);
    }
    Ok(SelftestReport { suites })
}
