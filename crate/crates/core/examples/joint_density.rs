//! Finite-N joint density of a real eigenvalue and its overlap, and the
//! two routes to the density of real eigenvalues.

use elliptic_kappa::finite_n_jdf::{fn_density, jdf_point, JdfAtZ};
use elliptic_kappa::prt_kernels::EnsembleParams;

fn main() -> elliptic_kappa::Result<()> {
    let params = EnsembleParams::new(10, 0.9)?;

    println!("overlap profile at z = 0.5, N = 10, tau = 0.9");
    for t in [0.01, 0.1, 1.0, 10.0, 100.0, 1000.0] {
        let p = jdf_point(params, 0.5, t)?;
        println!("  t = {t:>7}  q = {:>9.3}  density {:.6e}  t^2 * density {:.4}", p.q, p.density, t * t * p.density);
    }

    println!("\n    z      integrated      closed form");
    for z in [-4.0, -2.0, 0.0, 1.0, 3.0, 5.0] {
        let at = JdfAtZ::new(params, z)?;
        println!("{z:>5}  {:.12}  {:.12}", at.marginal()?, fn_density(params, z)?);
    }
    Ok(())
}
