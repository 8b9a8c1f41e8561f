//! Overlap tail in the weakly non-Hermitian regime: the distribution of t
//! decays like t^-2.

use elliptic_kappa::ensemble_sampler::MeasureOptions;
use elliptic_kappa::mc_harness::{run_experiment, tail_slope, BinEdges, ExperimentConfig, Scaling, TauSpec};

fn main() -> elliptic_kappa::Result<()> {
    let config = ExperimentConfig {
        n: 100,
        tau_spec: TauSpec::Weak(1.0),
        num_matrices: 1000,
        seed: 3,
        scaling: Scaling::Weak,
        z_bins: BinEdges::linear(-2.2, 2.2, 22)?,
        t_bins: BinEdges::log(1e-2, 1e3, 15)?,
        measure: MeasureOptions::default(),
        comparison: None,
    };
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let h = run_experiment(&config, workers)?;
    for (j, count) in h.t_marginal().into_iter().enumerate() {
        let (lo, hi) = config.t_bins.bounds(j);
        println!("t in [{lo:>8.3}, {hi:>8.3})  {count:>6}");
    }
    println!("fitted tail exponent on [10, 1000]: {:.3}", tail_slope(&h, 10.0, 1000.0)?);
    Ok(())
}
