//! Dense column-major matrices and the handful of LAPACK routines the
//! sampler needs: Hessenberg reduction, real Schur form, Schur reordering,
//! eigenvectors and LU inversion.

use std::ffi::c_int;
use std::sync::OnceLock;

use crate::error::{Error, Result};

#[link(name = "openblas")]
extern "C" {
    fn openblas_set_num_threads(n: c_int);

    fn dgehrd_(
        n: *const c_int,
        ilo: *const c_int,
        ihi: *const c_int,
        a: *mut f64,
        lda: *const c_int,
        tau: *mut f64,
        work: *mut f64,
        lwork: *const c_int,
        info: *mut c_int,
    );

    fn dhseqr_(
        job: *const u8,
        compz: *const u8,
        n: *const c_int,
        ilo: *const c_int,
        ihi: *const c_int,
        h: *mut f64,
        ldh: *const c_int,
        wr: *mut f64,
        wi: *mut f64,
        z: *mut f64,
        ldz: *const c_int,
        work: *mut f64,
        lwork: *const c_int,
        info: *mut c_int,
        len_job: usize,
        len_compz: usize,
    );

    fn dtrexc_(
        compq: *const u8,
        n: *const c_int,
        t: *mut f64,
        ldt: *const c_int,
        q: *mut f64,
        ldq: *const c_int,
        ifst: *mut c_int,
        ilst: *mut c_int,
        work: *mut f64,
        info: *mut c_int,
        len_compq: usize,
    );

    fn dgeev_(
        jobvl: *const u8,
        jobvr: *const u8,
        n: *const c_int,
        a: *mut f64,
        lda: *const c_int,
        wr: *mut f64,
        wi: *mut f64,
        vl: *mut f64,
        ldvl: *const c_int,
        vr: *mut f64,
        ldvr: *const c_int,
        work: *mut f64,
        lwork: *const c_int,
        info: *mut c_int,
        len_jobvl: usize,
        len_jobvr: usize,
    );

    fn dgetrf_(m: *const c_int, n: *const c_int, a: *mut f64, lda: *const c_int, ipiv: *mut c_int, info: *mut c_int);

    fn dgetri_(
        n: *const c_int,
        a: *mut f64,
        lda: *const c_int,
        ipiv: *const c_int,
        work: *mut f64,
        lwork: *const c_int,
        info: *mut c_int,
    );
}

static BACKEND: OnceLock<std::result::Result<(), String>> = OnceLock::new();

/// Environment variable that pins the OpenBLAS kernel family at load time.
pub const CORETYPE_VAR: &str = "OPENBLAS_CORETYPE";

/// Kernel family used when the autodetected one fails the backend check.
pub const FALLBACK_CORETYPE: &str = "Haswell";

/// Pins OpenBLAS to one thread (parallelism lives in the Monte-Carlo
/// harness) and validates the backend once per process.
fn init() -> Result<()> {
    BACKEND
        .get_or_init(|| {
            unsafe { openblas_set_num_threads(1) };
            probe_backend()
        })
        .clone()
        .map_err(Error::Numeric)
}

/// Runs the backend check and reports its outcome.
///
/// Some OpenBLAS builds select kernels at load time that return wrong
/// results for the blocked Hessenberg and LU paths. Setting
/// `OPENBLAS_CORETYPE=Haswell` before the process starts avoids them.
pub fn backend_check() -> Result<()> {
    init()
}

fn probe_backend() -> std::result::Result<(), String> {
    let n = 160;
    let a = lcg_matrix(n, 7);
    let fail = |what: &str, err: f64| {
        Err(format!(
            "LAPACK backend returned wrong results ({what} error {err:e}); \
             restart with {CORETYPE_VAR}={FALLBACK_CORETYPE}"
        ))
    };

    let mut h = a.clone();
    hessenberg_in_place(&mut h).map_err(|e| e.to_string())?;
    clear_below_subdiagonal(&mut h);
    let trace = |m: &Matrix| (0..n).map(|i| m[(i, i)]).sum::<f64>();
    let scale = a.frobenius_norm();
    let err = (trace(&h) - trace(&a)).abs().max((h.frobenius_norm() - scale).abs()) / scale;
    if !(err < 1e-12) {
        return fail("Hessenberg reduction", err);
    }

    let inv = lu_inverse(&a).map_err(|e| e.to_string())?;
    let prod = inv.mul(&a);
    let mut err = 0.0f64;
    for j in 0..n {
        for i in 0..n {
            let e = if i == j { 1.0 } else { 0.0 };
            err = err.max((prod[(i, j)] - e).abs());
        }
    }
    if !(err < 1e-9) {
        return fail("LU inverse", err);
    }
    Ok(())
}

fn lcg_matrix(n: usize, seed: u64) -> Matrix {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut m = Matrix::zeros(n);
    for v in m.data.iter_mut() {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        *v = ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0;
    }
    m
}

fn dim(n: usize) -> c_int {
    c_int::try_from(n).expect("matrix dimension fits in a C int")
}

/// Square matrix stored column by column.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds from row-major nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut m = Self::zeros(n);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), n, "matrix must be square");
            for (j, &v) in r.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }

    pub fn from_column_major(n: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * n);
        Self { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Self {
        let mut m = Self::zeros(self.n);
        for j in 0..self.n {
            for i in 0..self.n {
                m[(j, i)] = self[(i, j)];
            }
        }
        m
    }

    pub fn mul(&self, other: &Self) -> Self {
        let n = self.n;
        let mut out = Self::zeros(n);
        for j in 0..n {
            for k in 0..n {
                let b = other[(k, j)];
                if b == 0.0 {
                    continue;
                }
                let col = &self.data[k * n..(k + 1) * n];
                let dst = &mut out.data[j * n..(j + 1) * n];
                for (d, a) in dst.iter_mut().zip(col) {
                    *d += a * b;
                }
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[j * self.n + i]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[j * self.n + i]
    }
}

/// Real Schur form `T` (without the orthogonal factor) and the eigenvalues
/// read off its diagonal blocks.
#[derive(Clone, Debug)]
pub struct SchurForm {
    pub t: Matrix,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl SchurForm {
    /// Indices of the 1x1 diagonal blocks.
    pub fn real_positions(&self) -> Vec<usize> {
        (0..self.t.n).filter(|&k| self.is_real_block(k)).collect()
    }

    fn is_real_block(&self, k: usize) -> bool {
        let n = self.t.n;
        (k + 1 == n || self.t[(k + 1, k)] == 0.0) && (k == 0 || self.t[(k, k - 1)] == 0.0)
    }
}

fn hessenberg_in_place(a: &mut Matrix) -> Result<()> {
    let n = dim(a.n);
    let mut tau = vec![0.0; a.n.max(1)];
    let mut info = 0;
    let mut query = 0.0;
    let minus_one = -1;
    let one = 1;
    unsafe {
        dgehrd_(&n, &one, &n, a.data.as_mut_ptr(), &n, tau.as_mut_ptr(), &mut query, &minus_one, &mut info);
    }
    let lwork = (query as c_int).max(a.n as c_int).max(1);
    let mut work = vec![0.0; lwork as usize];
    unsafe {
        dgehrd_(&n, &one, &n, a.data.as_mut_ptr(), &n, tau.as_mut_ptr(), work.as_mut_ptr(), &lwork, &mut info);
    }
    if info != 0 {
        return Err(Error::Numeric(format!("Hessenberg reduction failed, info = {info}")));
    }
    Ok(())
}

fn clear_below_subdiagonal(a: &mut Matrix) {
    for j in 0..a.n {
        for i in j + 2..a.n {
            a[(i, j)] = 0.0;
        }
    }
}

fn hqr(h: &mut Matrix, job: u8) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = dim(h.n);
    let mut wr = vec![0.0; h.n];
    let mut wi = vec![0.0; h.n];
    let mut z = [0.0; 1];
    let one = 1;
    let mut info = 0;
    let lwork = (11 * h.n).max(1) as c_int;
    let mut work = vec![0.0; lwork as usize];
    unsafe {
        dhseqr_(
            &job,
            &b'N',
            &n,
            &one,
            &n,
            h.data.as_mut_ptr(),
            &n,
            wr.as_mut_ptr(),
            wi.as_mut_ptr(),
            z.as_mut_ptr(),
            &one,
            work.as_mut_ptr(),
            &lwork,
            &mut info,
            1,
            1,
        );
    }
    if info != 0 {
        return Err(Error::Numeric(format!("QR iteration did not converge, info = {info}")));
    }
    Ok((wr, wi))
}

/// Real Schur form of `a`.
pub fn real_schur(a: &Matrix) -> Result<SchurForm> {
    init()?;
    if !a.is_finite() {
        return Err(Error::Numeric("matrix has non-finite entries".into()));
    }
    let mut t = a.clone();
    if t.n == 0 {
        return Ok(SchurForm {
            t,
            re: vec![],
            im: vec![],
        });
    }
    hessenberg_in_place(&mut t)?;
    let (re, im) = hqr(&mut t, b'S')?;
    clear_below_subdiagonal(&mut t);
    Ok(SchurForm { t, re, im })
}

/// Eigenvalues only, as `(re, im)`.
pub fn eigenvalues(a: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
    init()?;
    if !a.is_finite() {
        return Err(Error::Numeric("matrix has non-finite entries".into()));
    }
    let mut t = a.clone();
    if t.n == 0 {
        return Ok((vec![], vec![]));
    }
    hessenberg_in_place(&mut t)?;
    hqr(&mut t, b'E')
}

/// Moves the diagonal block starting at `from` to position `to` by
/// orthogonal similarity, in place. Returns `false` when LAPACK rejects a
/// swap because the blocks are too close to separate stably.
///
/// Call only on a Schur form produced by [`real_schur`], which has already
/// validated the backend.
pub fn reorder_schur(t: &mut Matrix, from: usize, to: usize) -> bool {
    let n = dim(t.n);
    let mut ifst = from as c_int + 1;
    let mut ilst = to as c_int + 1;
    let mut q = [0.0; 1];
    let one = 1;
    let mut work = vec![0.0; t.n.max(1)];
    let mut info = 0;
    unsafe {
        dtrexc_(
            &b'N',
            &n,
            t.data.as_mut_ptr(),
            &n,
            q.as_mut_ptr(),
            &one,
            &mut ifst,
            &mut ilst,
            work.as_mut_ptr(),
            &mut info,
            1,
        );
    }
    info == 0
}

/// Eigenvalues and right eigenvectors. A complex pair `re +- i im` at
/// positions `k, k+1` has eigenvector `v[k] +- i v[k+1]`; every real
/// eigenvector column has unit Euclidean norm.
pub fn right_eigenvectors(a: &Matrix) -> Result<(Vec<f64>, Vec<f64>, Matrix)> {
    init()?;
    let n = dim(a.n);
    let mut work_a = a.clone();
    let mut wr = vec![0.0; a.n];
    let mut wi = vec![0.0; a.n];
    let mut vl = [0.0; 1];
    let mut vr = Matrix::zeros(a.n);
    let one = 1;
    let mut info = 0;
    let lwork = (8 * a.n).max(1) as c_int;
    let mut work = vec![0.0; lwork as usize];
    unsafe {
        dgeev_(
            &b'N',
            &b'V',
            &n,
            work_a.data.as_mut_ptr(),
            &n,
            wr.as_mut_ptr(),
            wi.as_mut_ptr(),
            vl.as_mut_ptr(),
            &one,
            vr.data.as_mut_ptr(),
            &n,
            work.as_mut_ptr(),
            &lwork,
            &mut info,
            1,
            1,
        );
    }
    if info != 0 {
        return Err(Error::Numeric(format!("eigenvector computation failed, info = {info}")));
    }
    Ok((wr, wi, vr))
}

/// Inverse by LU with partial pivoting.
pub fn inverse(a: &Matrix) -> Result<Matrix> {
    init()?;
    lu_inverse(a)
}

fn lu_inverse(a: &Matrix) -> Result<Matrix> {
    let n = dim(a.n);
    let mut inv = a.clone();
    let mut ipiv = vec![0 as c_int; a.n];
    let mut info = 0;
    unsafe {
        dgetrf_(&n, &n, inv.data.as_mut_ptr(), &n, ipiv.as_mut_ptr(), &mut info);
    }
    if info != 0 {
        return Err(Error::Numeric(format!("singular matrix, info = {info}")));
    }
    let lwork = (64 * a.n).max(1) as c_int;
    let mut work = vec![0.0; lwork as usize];
    unsafe {
        dgetri_(&n, inv.data.as_mut_ptr(), &n, ipiv.as_ptr(), work.as_mut_ptr(), &lwork, &mut info);
    }
    if info != 0 {
        return Err(Error::Numeric(format!("matrix inversion failed, info = {info}")));
    }
    Ok(inv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize, seed: u64) -> Matrix {
        lcg_matrix(n, seed)
    }

    #[test]
    fn schur_form_is_quasi_triangular_and_keeps_the_spectrum() {
        let a = sample(12, 3);
        let s = real_schur(&a).unwrap();
        for j in 0..12 {
            for i in j + 2..12 {
                assert_eq!(s.t[(i, j)], 0.0);
            }
        }
        let trace_a: f64 = (0..12).map(|i| a[(i, i)]).sum();
        let sum_re: f64 = s.re.iter().sum();
        assert!((trace_a - sum_re).abs() < 1e-12);
        let (re, _) = eigenvalues(&a).unwrap();
        let mut x = re.clone();
        let mut y = s.re.clone();
        x.sort_by(f64::total_cmp);
        y.sort_by(f64::total_cmp);
        for (p, q) in x.iter().zip(&y) {
            assert!((p - q).abs() < 1e-10);
        }
        let reals = s.real_positions();
        assert_eq!(reals.len(), s.im.iter().filter(|&&v| v == 0.0).count());
    }

    #[test]
    fn reordering_moves_a_real_eigenvalue_to_the_front() {
        let a = sample(9, 11);
        let s = real_schur(&a).unwrap();
        let k = *s.real_positions().last().unwrap();
        let lambda = s.t[(k, k)];
        let mut t = s.t.clone();
        assert!(reorder_schur(&mut t, k, 0));
        assert!((t[(0, 0)] - lambda).abs() < 1e-12);
        assert_eq!(t[(1, 0)], 0.0);
        assert!((t.frobenius_norm() - s.t.frobenius_norm()).abs() < 1e-12);
    }

    #[test]
    fn backend_passes_its_check() {
        backend_check().unwrap();
    }

    #[test]
    fn large_schur_preserves_invariants() {
        let a = sample(220, 17);
        let s = real_schur(&a).unwrap();
        let trace: f64 = (0..220).map(|i| a[(i, i)]).sum();
        let sum_re: f64 = s.re.iter().sum();
        assert!((trace - sum_re).abs() < 1e-10);
        assert!((s.t.frobenius_norm() - a.frobenius_norm()).abs() < 1e-10);
    }

    #[test]
    fn eigenvectors_and_inverse() {
        let a = sample(7, 5);
        let (wr, wi, v) = right_eigenvectors(&a).unwrap();
        let vi = inverse(&v).unwrap();
        let id = vi.mul(&v);
        for i in 0..7 {
            for j in 0..7 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((id[(i, j)] - e).abs() < 1e-10);
            }
        }
        for k in 0..7 {
            if wi[k] == 0.0 {
                for i in 0..7 {
                    let av: f64 = (0..7).map(|j| a[(i, j)] * v[(j, k)]).sum();
                    assert!((av - wr[k] * v[(i, k)]).abs() < 1e-12);
                }
            }
        }
    }
}
