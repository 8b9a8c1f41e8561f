//! Random matrices from the real elliptic ensemble and measurement of the
//! overlap `t = kappa^2 - 1` of each real eigenvalue.
//!
//! The primary measurement works on the real Schur form: a real eigenvalue
//! is moved to the top-left corner by orthogonal reordering, which exposes
//! the coupling row `w` and the trailing block `X'` in
//! `[[lambda, w], [0, X']]`. The left eigenvector is then `(1, b)` with
//! `(lambda I - X'^T) b = w`, and `t = |b|^2`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::linalg::{eigenvalues, inverse, real_schur, reorder_schur, right_eigenvectors, Matrix};

/// One draw from the ensemble together with the coordinates that
/// reproduce it.
#[derive(Clone, Debug)]
pub struct MatrixSample {
    pub n: usize,
    pub tau: f64,
    pub entries: Matrix,
    pub seed: u64,
    pub index: u64,
}

/// A real eigenvalue with its shifted overlap and condition number.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RealEigObservation {
    pub lambda: f64,
    pub t: f64,
    pub kappa: f64,
    pub residual: f64,
    pub seed: u64,
    pub index: u64,
}

/// The random stream for matrix `index` of a run with `seed`. Streams are
/// independent of how the index range is split between workers.
pub fn matrix_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws `X = sqrt((1+tau)/2) S + sqrt((1-tau)/2) A` with `S`, `A` the
/// symmetric and antisymmetric parts of independent Gaussian matrices.
///
/// Each pair `(X_ij, X_ji)` is built from one standard normal for the
/// symmetric part and one for the antisymmetric part, which has the same
/// law as symmetrising full Gaussian matrices.
pub fn sample_matrix(n: usize, tau: f64, seed: u64, index: u64) -> Result<MatrixSample> {
    if n == 0 {
        return domain("matrix dimension must be positive");
    }
    if !(0.0..=1.0).contains(&tau) {
        return domain(format!("tau must lie in [0, 1], got {tau}"));
    }
    let mut rng = matrix_rng(seed, index);
    let c_sym = (0.5 * (1.0 + tau)).sqrt();
    let c_anti = (0.5 * (1.0 - tau)).sqrt();
    let diag = (1.0 + tau).sqrt();
    let mut x = Matrix::zeros(n);
    for i in 0..n {
        let g: f64 = StandardNormal.sample(&mut rng);
        x[(i, i)] = diag * g;
        for j in i + 1..n {
            let s: f64 = StandardNormal.sample(&mut rng);
            let a: f64 = StandardNormal.sample(&mut rng);
            x[(i, j)] = c_sym * s + c_anti * a;
            x[(j, i)] = c_sym * s - c_anti * a;
        }
    }
    Ok(MatrixSample {
        n,
        tau,
        entries: x,
        seed,
        index,
    })
}

/// Wraps a given matrix as a sample (used for deterministic inputs).
pub fn sample_from_matrix(entries: Matrix, tau: f64) -> MatrixSample {
    MatrixSample {
        n: entries.dim(),
        tau,
        entries,
        seed: 0,
        index: 0,
    }
}

/// Thresholds for the Schur-route measurement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeasureOptions {
    /// A pivot of the triangular solve below `pivot_tol * |T|_F` counts as
    /// a breakdown.
    pub pivot_tol: f64,
    /// Largest accepted relative residual of the solve.
    pub residual_gate: f64,
}

impl Default for MeasureOptions {
    fn default() -> Self {
        Self {
            pivot_tol: 1e-13,
            residual_gate: 1e-8,
        }
    }
}

/// Result of measuring one matrix.
#[derive(Clone, Debug, Default)]
pub struct SchurMeasurement {
    pub observations: Vec<RealEigObservation>,
    /// Real eigenvalues whose overlap could not be computed reliably.
    pub discards: usize,
    /// All 1x1 blocks of the Schur form.
    pub real_count: usize,
}

/// Overlaps of every real eigenvalue by the Schur-reordering route.
pub fn real_eig_overlaps(m: &MatrixSample, opts: MeasureOptions) -> Result<SchurMeasurement> {
    let schur = real_schur(&m.entries)?;
    let tnorm = schur.t.frobenius_norm();
    let positions = schur.real_positions();
    let mut out = SchurMeasurement {
        real_count: positions.len(),
        ..Default::default()
    };
    let mut t = schur.t.clone();
    for &k in &positions {
        t.clone_from(&schur.t);
        let lambda = schur.t[(k, k)];
        if k > 0 && !reorder_schur(&mut t, k, 0) {
            out.discards += 1;
            continue;
        }
        match leading_overlap(&t, opts.pivot_tol * tnorm) {
            Some((ov, residual)) if residual <= opts.residual_gate => {
                out.observations.push(RealEigObservation {
                    lambda,
                    t: ov,
                    kappa: (1.0 + ov).sqrt(),
                    residual,
                    seed: m.seed,
                    index: m.index,
                });
            }
            _ => out.discards += 1,
        }
    }
    Ok(out)
}

/// For a Schur form with a real eigenvalue in the corner, solves
/// `(lambda I - X'^T) b = w` by block forward substitution and returns
/// `(|b|^2, relative residual)`. `None` on a pivot below `pivot_abs`.
fn leading_overlap(t: &Matrix, pivot_abs: f64) -> Option<(f64, f64)> {
    let n = t.dim();
    if n == 1 {
        return Some((0.0, 0.0));
    }
    let lambda = t[(0, 0)];
    let m = n - 1;
    // x'(i, j) = t(i+1, j+1); w(i) = t(0, i+1)
    let xp = |i: usize, j: usize| t[(i + 1, j + 1)];
    let w: Vec<f64> = (0..m).map(|i| t[(0, i + 1)]).collect();
    let mut b = vec![0.0; m];
    let mut i = 0;
    while i < m {
        let block2 = i + 1 < m && xp(i + 1, i) != 0.0;
        // rhs_r = w_r + sum_{j<i} x'(j, r) b_j
        let dot = |r: usize| -> f64 {
            let col = &t.as_slice()[(r + 1) * n + 1..(r + 1) * n + 1 + i];
            col.iter().zip(&b[..i]).map(|(x, y)| x * y).sum()
        };
        if block2 {
            let r0 = w[i] + dot(i);
            let r1 = w[i + 1] + dot(i + 1);
            // M = lambda I - B^T with B the 2x2 block
            let (m00, m01) = (lambda - xp(i, i), -xp(i + 1, i));
            let (m10, m11) = (-xp(i, i + 1), lambda - xp(i + 1, i + 1));
            let det = m00 * m11 - m01 * m10;
            if det.abs() <= pivot_abs * pivot_abs {
                return None;
            }
            b[i] = (r0 * m11 - m01 * r1) / det;
            b[i + 1] = (m00 * r1 - m10 * r0) / det;
            i += 2;
        } else {
            let piv = lambda - xp(i, i);
            if piv.abs() <= pivot_abs {
                return None;
            }
            b[i] = (w[i] + dot(i)) / piv;
            i += 1;
        }
    }
    if !b.iter().all(|v| v.is_finite()) {
        return None;
    }
    // residual of (lambda I - X'^T) b = w
    let mut res2 = 0.0;
    let mut w2 = 0.0;
    for r in 0..m {
        let mut v = lambda * b[r];
        let col = &t.as_slice()[(r + 1) * n + 1..(r + 2) * n];
        for (x, y) in col.iter().zip(&b) {
            v -= x * y;
        }
        res2 += (v - w[r]) * (v - w[r]);
        w2 += w[r] * w[r];
    }
    let residual = if w2 > 0.0 { (res2 / w2).sqrt() } else { res2.sqrt() };
    Some((b.iter().map(|v| v * v).sum(), residual))
}

/// Number of real eigenvalues (1x1 Schur blocks) without computing overlaps.
pub fn count_real_eigenvalues(m: &MatrixSample) -> Result<usize> {
    let (_, im) = eigenvalues(&m.entries)?;
    Ok(im.iter().filter(|&&v| v == 0.0).count())
}

/// Largest accepted `|X r - lambda r| / |X|_F` on the eigenvector route.
pub const EIGVEC_QUALITY_GATE: f64 = 1e-10;
/// Largest accepted `|V|_F |V^{-1}|_F`.
pub const EIGVEC_CONDITION_BOUND: f64 = 1e12;

/// Overlaps from the full eigenvector matrix: `O_ii = |row_i(V^{-1})|^2 |col_i(V)|^2`.
pub fn overlaps_via_eigvecs(m: &MatrixSample) -> Result<Vec<RealEigObservation>> {
    let x = &m.entries;
    let n = m.n;
    let (wr, wi, v) = right_eigenvectors(x)?;
    let xnorm = x.frobenius_norm().max(f64::MIN_POSITIVE);
    let mut worst = 0.0f64;
    let mut k = 0;
    while k < n {
        if wi[k] == 0.0 {
            let mut r2 = 0.0;
            for i in 0..n {
                let xr: f64 = (0..n).map(|j| x[(i, j)] * v[(j, k)]).sum();
                r2 += (xr - wr[k] * v[(i, k)]).powi(2);
            }
            worst = worst.max(r2.sqrt());
            k += 1;
        } else {
            let (mu, nu) = (wr[k], wi[k]);
            let mut r2 = 0.0;
            let mut nrm = 0.0;
            for i in 0..n {
                let xu: f64 = (0..n).map(|j| x[(i, j)] * v[(j, k)]).sum();
                let xv: f64 = (0..n).map(|j| x[(i, j)] * v[(j, k + 1)]).sum();
                let (u, w) = (v[(i, k)], v[(i, k + 1)]);
                r2 += (xu - mu * u + nu * w).powi(2) + (xv - nu * u - mu * w).powi(2);
                nrm += u * u + w * w;
            }
            worst = worst.max((r2 / nrm).sqrt());
            k += 2;
        }
    }
    if worst > EIGVEC_QUALITY_GATE * xnorm {
        return Err(Error::Numeric(format!(
            "eigenvector residual {worst:e} above gate for matrix {}",
            m.index
        )));
    }
    let vinv = inverse(&v)?;
    let cond = v.frobenius_norm() * vinv.frobenius_norm();
    if !(cond <= EIGVEC_CONDITION_BOUND) {
        return Err(Error::Numeric(format!(
            "eigenvector matrix condition {cond:e} above bound for matrix {}",
            m.index
        )));
    }
    let mut out = Vec::new();
    for k in 0..n {
        if wi[k] != 0.0 {
            continue;
        }
        let r2: f64 = (0..n).map(|i| v[(i, k)].powi(2)).sum();
        let l2: f64 = (0..n).map(|j| vinv[(k, j)].powi(2)).sum();
        let t = (l2 * r2 - 1.0).max(0.0);
        let mut res2 = 0.0;
        for i in 0..n {
            let xr: f64 = (0..n).map(|j| x[(i, j)] * v[(j, k)]).sum();
            res2 += (xr - wr[k] * v[(i, k)]).powi(2);
        }
        out.push(RealEigObservation {
            lambda: wr[k],
            t,
            kappa: (1.0 + t).sqrt(),
            residual: res2.sqrt() / xnorm,
            seed: m.seed,
            index: m.index,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted(mut v: Vec<RealEigObservation>) -> Vec<RealEigObservation> {
        v.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
        v
    }

    #[test]
    fn triangular_two_by_two() {
        let m = sample_from_matrix(Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 0.0]]), 0.0);
        let s = sorted(real_eig_overlaps(&m, MeasureOptions::default()).unwrap().observations);
        let e = sorted(overlaps_via_eigvecs(&m).unwrap());
        assert_eq!(s.len(), 2);
        for obs in [&s, &e] {
            // both eigenvalues share the same overlap 4
            for o in obs.iter() {
                assert!((o.t - 4.0).abs() < 1e-13, "{o:?}");
                assert!((o.kappa - 5f64.sqrt()).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn symmetric_matrices_have_unit_condition() {
        for idx in 0..5 {
            let m = sample_matrix(12, 1.0, 9, idx).unwrap();
            for i in 0..12 {
                for j in 0..12 {
                    assert_eq!(m.entries[(i, j)], m.entries[(j, i)]);
                }
            }
            let r = real_eig_overlaps(&m, MeasureOptions::default()).unwrap();
            assert_eq!(r.real_count, 12);
            for o in &r.observations {
                assert!(o.t <= 1e-20, "{o:?}");
            }
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let a = sample_matrix(6, 0.3, 42, 7).unwrap();
        let b = sample_matrix(6, 0.3, 42, 7).unwrap();
        let c = sample_matrix(6, 0.3, 42, 8).unwrap();
        assert_eq!(a.entries, b.entries);
        assert_ne!(a.entries, c.entries);
        assert!(sample_matrix(0, 0.3, 1, 1).is_err());
        assert!(sample_matrix(3, 1.3, 1, 1).is_err());
    }

    #[test]
    fn entry_covariance() {
        let tau = 0.6;
        let draws = 20_000;
        let (mut sxy, mut sxx, mut sdd) = (0.0, 0.0, 0.0);
        for idx in 0..draws {
            let m = sample_matrix(3, tau, 1, idx).unwrap();
            sxy += m.entries[(0, 1)] * m.entries[(1, 0)];
            sxx += m.entries[(0, 1)].powi(2);
            sdd += m.entries[(2, 2)].powi(2);
        }
        let d = draws as f64;
        let se = (2.0 / d).sqrt();
        assert!((sxy / d - tau).abs() < 5.0 * se);
        assert!((sxx / d - 1.0).abs() < 5.0 * se);
        assert!((sdd / d - (1.0 + tau)).abs() < 5.0 * se * (1.0 + tau));
    }

    #[test]
    fn routes_agree() {
        for idx in 0..50 {
            let m = sample_matrix(15, 0.4, 3, idx).unwrap();
            let s = real_eig_overlaps(&m, MeasureOptions::default()).unwrap();
            assert_eq!(s.discards, 0);
            let a = sorted(s.observations);
            let b = sorted(overlaps_via_eigvecs(&m).unwrap());
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                assert!((x.lambda - y.lambda).abs() < 1e-10);
                assert!((x.t - y.t).abs() <= 1e-8 * x.t.max(1e-6), "{x:?} {y:?}");
                assert!(x.kappa >= 1.0);
            }
        }
    }

    #[test]
    fn orthogonal_invariance() {
        let m = sample_matrix(10, 0.2, 5, 1).unwrap();
        // a random orthogonal matrix from the Schur-free QR of a Gaussian draw
        let g = sample_matrix(10, 0.0, 6, 1).unwrap().entries;
        let q = gram_schmidt(&g);
        let rotated = sample_from_matrix(q.mul(&m.entries).mul(&q.transpose()), 0.2);
        let a = sorted(real_eig_overlaps(&m, MeasureOptions::default()).unwrap().observations);
        let b = sorted(real_eig_overlaps(&rotated, MeasureOptions::default()).unwrap().observations);
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert!((x.lambda - y.lambda).abs() < 1e-10);
            assert!((x.t - y.t).abs() <= 1e-8 * x.t.max(1e-6));
        }
    }

    fn gram_schmidt(a: &Matrix) -> Matrix {
        let n = a.dim();
        let mut q = a.clone();
        for j in 0..n {
            for k in 0..j {
                let d: f64 = (0..n).map(|i| q[(i, j)] * q[(i, k)]).sum();
                for i in 0..n {
                    let v = q[(i, k)];
                    q[(i, j)] -= d * v;
                }
            }
            let nrm: f64 = (0..n).map(|i| q[(i, j)].powi(2)).sum::<f64>().sqrt();
            for i in 0..n {
                q[(i, j)] /= nrm;
            }
        }
        q
    }

    #[test]
    fn counts_match_schur_blocks() {
        for idx in 0..20 {
            let m = sample_matrix(20, 0.5, 8, idx).unwrap();
            let r = real_eig_overlaps(&m, MeasureOptions::default()).unwrap();
            assert_eq!(count_real_eigenvalues(&m).unwrap(), r.real_count);
            assert_eq!(r.real_count % 2, 0);
        }
    }
}
