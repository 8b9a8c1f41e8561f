use elliptic_kappa::finite_n_jdf::{fn_density, marginal_density};
use elliptic_kappa::mc_harness::{real_count_statistics, run_experiment, BinEdges, ExperimentConfig, Scaling, TauSpec};
use elliptic_kappa::prt_kernels::EnsembleParams;
use elliptic_kappa::quad::integrate;

/// Mean number of real eigenvalues, `int fn_density dz`.
fn expected_count(params: EnsembleParams) -> f64 {
    let r = (1.0 + params.tau) * (params.n as f64).sqrt() + 12.0;
    integrate(|z| fn_density(params, z).unwrap(), -r, r, 1e-13, 1e-12).unwrap().value
}

#[test]
fn joint_density_carries_the_mean_count() {
    for n in [2usize, 4, 10] {
        let params = EnsembleParams::new(n, 0.9).unwrap();
        let r = 1.9 * (n as f64).sqrt() + 12.0;
        let total = integrate(|z| marginal_density(params, z).unwrap(), -r, r, 1e-11, 1e-9).unwrap().value;
        let count = expected_count(params);
        assert!((total - count).abs() / count < 1e-6, "N={n}: {total} vs {count}");
    }
}

fn assert_count_matches(n: usize, tau: f64, matrices: u64, seed: u64) {
    let s = real_count_statistics(n, tau, matrices, seed, 1).unwrap();
    let exact = expected_count(EnsembleParams::new(n, tau).unwrap());
    let z = (s.mean - exact) / s.standard_error();
    assert!(z.abs() < 3.0, "N={n} tau={tau}: mean {} vs {exact}, z = {z:.2}", s.mean);
}

#[test]
fn two_by_two_count_matches_its_density() {
    assert_count_matches(2, 0.5, 100_000, 31);
}

#[test]
fn ten_by_ten_count_matches_its_density() {
    assert_count_matches(10, 0.9, 20_000, 32);
}

#[test]
fn every_real_eigenvalue_is_observed() {
    let config = ExperimentConfig {
        n: 10,
        tau_spec: TauSpec::Fixed(0.9),
        num_matrices: 2000,
        seed: 33,
        scaling: Scaling::Raw,
        z_bins: BinEdges::linear(-10.0, 10.0, 20).unwrap(),
        t_bins: BinEdges::log(1e-3, 1e3, 12).unwrap(),
        measure: Default::default(),
        comparison: None,
    };
    let h = run_experiment(&config, 1).unwrap();
    let s = real_count_statistics(10, 0.9, 2000, 33, 1).unwrap();
    assert_eq!(h.discards, 0);
    assert_eq!(h.total_observations, (s.mean * 2000.0).round() as u64);
}

#[test]
fn weak_regime_keeps_a_finite_real_fraction() {
    let fraction = |n: usize, matrices: u64| {
        let tau = 1.0 - 1.0 / (2.0 * n as f64);
        real_count_statistics(n, tau, matrices, 34, 1).unwrap().mean / n as f64
    };
    let (f100, f200) = (fraction(100, 200), fraction(200, 100));
    assert!((f100 - f200).abs() / f200 < 0.2, "{f100} vs {f200}");
    assert!(f200 > 0.3);
}
