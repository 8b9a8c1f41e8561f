//! Large-N laws in the bulk, at the edge and at weak non-Hermiticity,
//! and how fast the finite-N density approaches them.

use elliptic_kappa::prt_kernels::EnsembleParams;
use elliptic_kappa::scaling_limits::{
    bulk_convergence_error, bulk_jdf, edge_jdf, weak_convergence_error, weak_density, weak_jdf, BulkPoint,
    EdgePoint, WeakPoint,
};

fn main() -> elliptic_kappa::Result<()> {
    println!("bulk  tau=0 z=0 t=1     {:.6}", bulk_jdf(BulkPoint::new(0.0, 0.0, 1.0)?));
    println!("edge  tau=0 delta=0 s=1 {:.6}", edge_jdf(EdgePoint::new(0.0, 0.0, 1.0)?));
    println!("weak  a=1 z=0 t=1       {:.6}", weak_jdf(WeakPoint::new(1.0, 0.0, 1.0)?));
    println!("weak density a=1 z=0    {:.6}", weak_density(1.0, 0.0)?);

    println!("\n   N   bulk error (tau=.5, z=.3, t=1)   weak error (a=1, z=0, t=1)");
    for n in [25usize, 50, 100, 200, 400] {
        let bulk = bulk_convergence_error(EnsembleParams::new(n, 0.5)?, 0.3, 1.0)?;
        let weak = weak_convergence_error(n, 1.0, 0.0, 1.0)?;
        println!("{n:>4}   {bulk:.3e}                       {weak:.3e}");
    }
    Ok(())
}
