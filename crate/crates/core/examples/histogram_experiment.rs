//! A small Monte-Carlo experiment: sample, histogram, compare with the
//! finite-N law, persist and reload.

use elliptic_kappa::mc_harness::{compare_to_model, run_experiment, ExperimentConfig, JointHistogram};

fn main() -> elliptic_kappa::Result<()> {
    let mut config = ExperimentConfig::from_json(include_str!("../configs/fig2_left_desk.json"))?;
    config.num_matrices = 20_000;

    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let h = run_experiment(&config, workers)?;
    println!(
        "{} matrices, {} real eigenvalues, {} discards, digest {}",
        h.total_matrices,
        h.total_observations,
        h.discards,
        &h.digest()[..16]
    );

    let report = compare_to_model(&h, config.comparison.as_ref().unwrap())?;
    println!(
        "{}: chi2 = {:.1} on {} dof, p = {:.3}, max |z| = {:.2}, passed = {}",
        report.model.name(),
        report.chi_square,
        report.degrees_of_freedom,
        report.p_value,
        report.max_abs_z,
        report.passed
    );

    let dir = std::env::temp_dir().join("ekappa_histogram_example");
    h.save(&dir)?;
    let back = JointHistogram::load(&dir)?;
    println!("reloaded from {}: identical = {}", dir.display(), back == h);
    Ok(())
}
