//! Hermite sequences, incomplete gamma and the Gaussian tail, including
//! arguments where plain `f64` arithmetic overflows.

use elliptic_kappa::specfun::{
    gaussian_tail, hermite_sequence, ln_factorial, ln_regularized_upper_gamma, phi_sequence,
    upper_incomplete_gamma,
};

fn main() -> elliptic_kappa::Result<()> {
    let he = hermite_sequence(1.5, 6)?;
    println!("He_k(1.5), k = 0..6: {:?}", he.to_f64_vec());

    // He_400(30) is far beyond f64 range; the log magnitude is still exact
    let big = hermite_sequence(30.0, 400)?.get(400);
    println!("ln |He_400(30)| = {:.6}, sign {}", big.log_abs(), big.sign());

    println!("phi_k(0.7; tau = 0.4): {:?}", phi_sequence(0.7, 0.4, 4)?);

    for (n, x) in [(3u64, 2.0), (30, 25.0), (200, 900.0)] {
        let g = upper_incomplete_gamma(n, x)?;
        println!(
            "Gamma({}, {x}): ln = {:.10}, regularized ln Q = {:.10}",
            n + 1,
            g.log_abs(),
            ln_regularized_upper_gamma(n, x)?
        );
    }
    println!("ln 100! = {:.10}", ln_factorial(100));
    println!("gaussian_tail(0) = {:.15} (sqrt(pi/2) = {:.15})", gaussian_tail(0.0), (std::f64::consts::PI / 2.0).sqrt());
    Ok(())
}
