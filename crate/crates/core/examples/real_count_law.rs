//! Mean number of real eigenvalues of real Ginibre matrices against
//! sqrt(2N/pi) + 1/2, and the fitted growth exponent.

use elliptic_kappa::mc_harness::{log_log_fit, real_count_statistics};

fn main() -> elliptic_kappa::Result<()> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut points = Vec::new();
    println!("   N   mean     s.e.    sqrt(2N/pi)+1/2");
    for (n, matrices) in [(25usize, 2000u64), (50, 1000), (100, 500), (200, 200)] {
        let s = real_count_statistics(n, 0.0, matrices, 1, workers)?;
        let asymptotic = (2.0 * n as f64 / std::f64::consts::PI).sqrt() + 0.5;
        println!("{n:>4}  {:>6.3}  {:>6.3}  {asymptotic:>6.3}", s.mean, s.standard_error());
        points.push((n as f64, s.mean));
    }
    let (slope, _) = log_log_fit(&points)?;
    println!("fitted exponent {slope:.3}");
    Ok(())
}
