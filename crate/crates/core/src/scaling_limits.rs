//! Large-N limit laws of the joint density: bulk, spectral edge and weak
//! non-Hermiticity, together with helpers that measure how far a rescaled
//! finite-N density is from its limit.

use std::f64::consts::PI;

use crate::error::{domain, Result};
use crate::finite_n_jdf::{jdf_q, jdf_t};
use crate::prt_kernels::EnsembleParams;
use crate::quad::GaussLegendre;
use crate::specfun::gaussian_tail;

const SQRT_2PI: f64 = 2.506_628_274_631_000_502_415_765_284_811;

/// Point in the bulk: eigenvalue in units of `sqrt(N)`, overlap in units of `N`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BulkPoint {
    pub tau: f64,
    pub z: f64,
    pub t: f64,
}

impl BulkPoint {
    pub fn new(tau: f64, z: f64, t: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&tau) {
            return domain(format!("bulk law needs 0 <= tau < 1, got {tau}"));
        }
        if !(z.abs() < 1.0 + tau) {
            return domain(format!("bulk law needs |z| < 1 + tau, got z = {z}"));
        }
        if !(t > 0.0) {
            return domain(format!("overlap must be positive, got {t}"));
        }
        Ok(Self { tau, z, t })
    }

    /// Scale of the inverse-gamma law in `t`.
    pub fn inverse_gamma_scale(&self) -> f64 {
        let w = 1.0 - self.z * self.z / ((1.0 + self.tau) * (1.0 + self.tau));
        0.5 * (1.0 - self.tau * self.tau) * w
    }
}

/// Point near the right spectral edge.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgePoint {
    pub tau: f64,
    pub delta: f64,
    pub sigma: f64,
}

impl EdgePoint {
    pub fn new(tau: f64, delta: f64, sigma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&tau) {
            return domain(format!("edge law needs 0 <= tau < 1, got {tau}"));
        }
        if !(sigma > 0.0) {
            return domain(format!("edge overlap scale must be positive, got {sigma}"));
        }
        if !delta.is_finite() {
            return domain("edge offset must be finite");
        }
        Ok(Self { tau, delta, sigma })
    }
}

/// Point in the weakly non-Hermitian regime `tau = 1 - a^2/(2N)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeakPoint {
    pub a: f64,
    pub z: f64,
    pub t: f64,
    /// `(pi rho_sc(z) a)^2`.
    pub big_a: f64,
}

impl WeakPoint {
    pub fn new(a: f64, z: f64, t: f64) -> Result<Self> {
        if !(a > 0.0) {
            return domain(format!("asymmetry a must be positive, got {a}"));
        }
        if !(z.abs() < 2.0) {
            return domain(format!("weak law needs |z| < 2, got {z}"));
        }
        if !(t > 0.0) {
            return domain(format!("overlap must be positive, got {t}"));
        }
        let r = PI * semicircle(z) * a;
        Ok(Self { a, z, t, big_a: r * r })
    }
}

/// Wigner semicircle density `sqrt(4 - z^2) / (2 pi)`, zero outside `[-2, 2]`.
pub fn semicircle(z: f64) -> f64 {
    if z.abs() >= 2.0 {
        0.0
    } else {
        (4.0 - z * z).sqrt() / (2.0 * PI)
    }
}

/// Bulk law in rescaled units.
pub fn bulk_jdf(p: BulkPoint) -> f64 {
    let w = 1.0 - p.z * p.z / ((1.0 + p.tau) * (1.0 + p.tau));
    let s = 1.0 - p.tau * p.tau;
    s.sqrt() / (2.0 * SQRT_2PI) * w / (p.t * p.t) * (-s / (2.0 * p.t) * w).exp()
}

/// Edge law.
pub fn edge_jdf(p: EdgePoint) -> f64 {
    let (d, s) = (p.delta, p.sigma);
    let pre = 1.0 / (4.0 * PI * s * s * (1.0 - p.tau * p.tau));
    let ln_e = -1.0 / (4.0 * s * s) + d / s;
    let bracket_a = (ln_e - 2.0 * d * d).exp();
    let bracket_b = (1.0 / s - 2.0 * d) * gaussian_tail(2.0 * d) * ln_e.exp();
    pre * (bracket_a + bracket_b)
}

/// `int_0^1 e^{-A s^2 / 2} w(s) ds` by the 64-point Gauss rule.
///
/// For large `A` the range is cut where the Gaussian has dropped below
/// `e^{-72}`.
fn gauss_weighted<F: Fn(f64) -> f64>(big_a: f64, w: F) -> f64 {
    let hi = if big_a > 144.0 { 12.0 / big_a.sqrt() } else { 1.0 };
    GaussLegendre::order64().integrate(|s| (-0.5 * big_a * s * s).exp() * w(s), 0.0, hi)
}

/// Weak non-Hermiticity law, by quadrature of its defining `s`-integral.
pub fn weak_jdf(p: WeakPoint) -> f64 {
    let (big_a, t) = (p.big_a, p.t);
    let inner = gauss_weighted(big_a, |s| (1.0 + big_a + big_a / t - big_a * s * s) * s * s);
    let v = 0.5 * big_a * semicircle(p.z) * (-big_a / (2.0 * t)).exp() / (t * t) * inner;
    // the by-parts form cancels as 1/A for small A
    debug_assert!(
        big_a < 1e-2 || (v - weak_jdf_by_parts(p)).abs() <= 1e-9 * v.abs().max(1e-300),
        "weak law forms disagree"
    );
    v
}

/// The same law after one integration by parts in `s`.
pub fn weak_jdf_by_parts(p: WeakPoint) -> f64 {
    let (big_a, t) = (p.big_a, p.t);
    let g = gaussian_unit_integral(big_a);
    let bracket = (2.0 / big_a - 1.0 / t) * (-0.5 * big_a).exp() + (1.0 + 1.0 / t - 2.0 / big_a) * g;
    0.5 * big_a * semicircle(p.z) * (-big_a / (2.0 * t)).exp() / (t * t) * bracket
}

/// `int_0^1 e^{-A s^2/2} ds = sqrt(pi/(2A)) erf(sqrt(A/2))`.
fn gaussian_unit_integral(big_a: f64) -> f64 {
    if big_a == 0.0 {
        return 1.0;
    }
    let r = (0.5 * big_a).sqrt();
    (0.5 * PI).sqrt() / big_a.sqrt() * libm::erf(r)
}

/// Mean density of real eigenvalues in the weak regime,
/// `rho_sc(z) int_0^1 e^{-A s^2/2} ds`.
pub fn weak_density(a: f64, z: f64) -> Result<f64> {
    if !(a > 0.0) {
        return domain(format!("asymmetry a must be positive, got {a}"));
    }
    if !(z.abs() <= 2.0) {
        return domain(format!("weak density needs |z| <= 2, got {z}"));
    }
    let rho = semicircle(z);
    let r = PI * rho * a;
    Ok(rho * gauss_weighted(r * r, |_| 1.0))
}

/// `|N jdf_t(z sqrt(N), N t) - bulk_jdf(z, t)|`.
pub fn bulk_convergence_error(params: EnsembleParams, z: f64, t: f64) -> Result<f64> {
    let limit = bulk_jdf(BulkPoint::new(params.tau, z, t)?);
    let nf = params.n as f64;
    let finite = nf * jdf_t(params, z * nf.sqrt(), nf * t)?;
    Ok((finite - limit).abs())
}

/// `|sqrt(N) jdf_q(z, q) - edge_jdf(delta, sigma)|` with
/// `z = sqrt(N)(1+tau) + delta sqrt(1-tau^2)` and `q = sigma sqrt(N(1-tau^2))`.
pub fn edge_convergence_error(params: EnsembleParams, delta: f64, sigma: f64) -> Result<f64> {
    let p = EdgePoint::new(params.tau, delta, sigma)?;
    let nf = params.n as f64;
    let s = (1.0 - p.tau * p.tau).sqrt();
    let z = nf.sqrt() * (1.0 + p.tau) + delta * s;
    let q = sigma * nf.sqrt() * s;
    Ok((nf.sqrt() * jdf_q(params, z, q)? - edge_jdf(p)).abs())
}

/// `|N^{-1/2} jdf_t(z sqrt(N), t) - weak_jdf(a, z, t)|` at `tau = 1 - a^2/(2N)`.
pub fn weak_convergence_error(n: usize, a: f64, z: f64, t: f64) -> Result<f64> {
    let p = WeakPoint::new(a, z, t)?;
    let params = EnsembleParams::weak(n, a)?;
    let nf = n as f64;
    let finite = jdf_t(params, z * nf.sqrt(), t)? / nf.sqrt();
    Ok((finite - weak_jdf(p)).abs())
}
