//! Draw one matrix, measure the overlap of every real eigenvalue through
//! the reordered Schur form, and cross-check against explicit eigenvectors.

use elliptic_kappa::ensemble_sampler::{overlaps_via_eigvecs, real_eig_overlaps, sample_matrix, MeasureOptions};

fn main() -> elliptic_kappa::Result<()> {
    let m = sample_matrix(40, 0.5, 7, 0)?;
    let schur = real_eig_overlaps(&m, MeasureOptions::default())?;
    let mut direct = overlaps_via_eigvecs(&m)?;
    direct.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    let mut obs = schur.observations;
    obs.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));

    println!("{} real eigenvalues, {} discarded", obs.len(), schur.discards);
    println!("   lambda        kappa         t (Schur)      t (eigvecs)");
    for (a, b) in obs.iter().zip(&direct) {
        println!("{:>9.4}  {:>11.5}  {:>14.8e}  {:>14.8e}", a.lambda, a.kappa, a.t, b.t);
    }
    Ok(())
}
