//! The P, R, T kernels at one point, and the residual of the identity
//! linking them across a range of sizes.

use elliptic_kappa::prt_kernels::{identity_residual, prt_eval, prt_recurrence_path, EnsembleParams};

fn main() -> elliptic_kappa::Result<()> {
    let params = EnsembleParams::new(12, 0.6)?;
    let z = 1.3;
    let bundle = prt_eval(params, z, &[0, 5, 10, 11])?;
    for (m, k) in &bundle.orders {
        println!("m = {m:>2}  P = {:+.6e}  R = {:+.6e}  T = {:+.6e}", k.p.to_f64(), k.r.to_f64(), k.t.to_f64());
    }

    let path = prt_recurrence_path(params, z, 11)?;
    let diff = (path.p(11) - bundle.p(11)).to_f64() / bundle.p(11).to_f64();
    println!("direct sum vs recurrence at m = 11: relative difference {diff:.2e}");

    println!("\n   N  worst identity residual over z in [-2 sqrt N, 2 sqrt N]");
    for n in [3usize, 10, 40, 200] {
        let params = EnsembleParams::new(n, 0.9)?;
        let r = 2.0 * (n as f64).sqrt();
        let worst = (0..=20)
            .map(|i| identity_residual(params, -r + r * i as f64 / 10.0))
            .try_fold(0f64, |acc, v| v.map(|v| acc.max(v)))?;
        println!("{n:>4}  {worst:.2e}");
    }
    Ok(())
}
