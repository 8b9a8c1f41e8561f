//! Exact finite-N joint density of a real eigenvalue `z` and its shifted
//! overlap, the marginal over the overlap, and the even-N closed-form
//! density of real eigenvalues used as an oracle.
//!
//! Two overlap variables appear: `t = kappa^2 - 1` is the shifted overlap
//! of an eigenvalue, and the density is written most compactly in
//! `q = t / (1 - tau)`.

use crate::error::{domain, Error, Result};
use crate::logval::{ScaledSum, SignedLogValue};
use crate::prt_kernels::{prt_eval, EnsembleParams, PrtBundle};
use crate::quad::integrate;
use crate::specfun::{ln_factorial, phi_sequence_scaled};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_741_780_329_736_406;

/// One evaluated point of the joint density.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JdfPoint {
    pub z: f64,
    pub q: f64,
    pub t: f64,
    /// Density per unit `t`.
    pub density: f64,
}

/// The joint density at a fixed eigenvalue location, reusable across many
/// overlap values.
#[derive(Clone, Debug)]
pub struct JdfAtZ {
    params: EnsembleParams,
    z: f64,
    kernels: PrtBundle,
    ln_norm: f64,
}

impl JdfAtZ {
    pub fn new(params: EnsembleParams, z: f64) -> Result<Self> {
        let n = params.n;
        if n < 2 {
            return domain(format!("the joint density needs N >= 2, got {n}"));
        }
        if params.tau >= 1.0 {
            return Err(Error::Unsupported("joint density at tau = 1".into()));
        }
        let ni = n as i64;
        let kernels = prt_eval(params, z, &[ni - 2, ni - 3])?;
        let ln_norm = -(2.0 * (1.0 + params.tau)).ln() - LN_SQRT_2PI - ln_factorial(n as u64 - 2);
        Ok(Self {
            params,
            z,
            kernels,
            ln_norm,
        })
    }

    pub fn params(&self) -> EnsembleParams {
        self.params
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    /// The five bracket terms of the density at `q`, in order: the
    /// `1/(1+q)` term, the `1/(1+q)^2` term, the `1/(1+tau+q)^2` term, the
    /// `1/(1+tau+q)` term and the mixed term.
    pub fn bracket_terms(&self, q: f64) -> [SignedLogValue; 5] {
        let tau = self.params.tau;
        let z = self.z;
        let n = self.params.n as i64;
        let nf = n as f64;
        let k = &self.kernels;
        let (p2, r2) = (k.p(n - 2), k.r(n - 2));
        let (p3, r3, t3) = (k.p(n - 3), k.r(n - 3), k.t(n - 3));
        let one_q = 1.0 + q;
        let tq = 1.0 + tau + q;
        let first = (p2.scale(1.0 + tau - 2.0 * z * z) + (r2 + r3.scale(tau * (nf - 2.0))).scale(2.0 * z))
            .scale(1.0 / one_q);
        let second = p2.scale(z * z / (one_q * one_q));
        let third = p3.scale(tau * tau * (1.0 + tau) * (1.0 + tau) * nf * (nf - 2.0) / (tq * tq));
        let fourth = (p3.scale(nf - 2.0) - t3).scale((1.0 + tau) * (1.0 - tau * tau) * (nf - 2.0) / tq);
        let fifth = r3.scale(-2.0 * tau * (1.0 + tau) * (nf - 2.0) * z / (one_q * tq));
        [first, second, third, fourth, fifth]
    }

    fn ln_prefactor(&self, q: f64) -> f64 {
        let tau = self.params.tau;
        let z = self.z;
        let half_n = 0.5 * self.params.n as f64;
        self.ln_norm - z * z / (2.0 * (1.0 + tau)) * (1.0 + q / (1.0 + q))
            - 0.5 * (q.ln() + q.ln_1p())
            + (half_n - 1.0) * (q / (q + 1.0 + tau)).ln()
    }

    /// Density per unit `q`.
    pub fn density_q(&self, q: f64) -> Result<f64> {
        if !(q > 0.0) || !q.is_finite() {
            return domain(format!("q must be positive and finite, got {q}"));
        }
        let terms = self.bracket_terms(q);
        let mut sum = ScaledSum::new();
        for v in terms {
            sum.add(v);
        }
        let bracket = sum.value();
        if bracket.sign() < 0 {
            let biggest = terms.iter().map(|v| v.log_abs()).fold(f64::NEG_INFINITY, f64::max);
            if bracket.log_abs() - biggest < (1e-8f64).ln() {
                return Ok(0.0);
            }
            return Err(Error::Numeric(format!(
                "negative density {bracket:?} at z={}, q={q}",
                self.z
            )));
        }
        let v = bracket.mul_exp(self.ln_prefactor(q)).to_f64();
        if !v.is_finite() {
            return Err(Error::Numeric(format!("density overflow at z={}, q={q}", self.z)));
        }
        Ok(v)
    }

    /// Density per unit `t`, with `q = t / (1 - tau)`.
    pub fn density_t(&self, t: f64) -> Result<f64> {
        let s = 1.0 - self.params.tau;
        Ok(self.density_q(t / s)? / s)
    }

    /// `int_0^inf density_q dq` after the substitution `u^2 = q / (1+q)`.
    pub fn marginal(&self) -> Result<f64> {
        self.marginal_with_tolerance(1e-10, 1e-8)
    }

    /// [`Self::marginal`] with explicit absolute and relative tolerances.
    pub fn marginal_with_tolerance(&self, abs_tol: f64, rel_tol: f64) -> Result<f64> {
        let mut failure = None;
        let res = integrate(
            |u| {
                if u <= 0.0 || u >= 1.0 {
                    return 0.0;
                }
                let w = 1.0 - u * u;
                let q = u * u / w;
                match self.density_q(q) {
                    Ok(v) => v * 2.0 * u / (w * w),
                    Err(e) => {
                        failure.get_or_insert(e);
                        0.0
                    }
                }
            },
            0.0,
            1.0,
            abs_tol,
            rel_tol,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        Ok(res?.value)
    }
}

/// Joint density per unit `q` at `(z, q)`.
pub fn jdf_q(params: EnsembleParams, z: f64, q: f64) -> Result<f64> {
    if !(q > 0.0) {
        return domain(format!("q must be positive, got {q}"));
    }
    JdfAtZ::new(params, z)?.density_q(q)
}

/// Joint density per unit `t` at `(z, t)`: `jdf_q(z, t/(1-tau)) / (1-tau)`.
pub fn jdf_t(params: EnsembleParams, z: f64, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return domain(format!("t must be positive, got {t}"));
    }
    JdfAtZ::new(params, z)?.density_t(t)
}

/// Evaluates the density at `(z, t)` and returns the full point.
pub fn jdf_point(params: EnsembleParams, z: f64, t: f64) -> Result<JdfPoint> {
    let density = jdf_t(params, z, t)?;
    Ok(JdfPoint {
        z,
        q: t / (1.0 - params.tau),
        t,
        density,
    })
}

/// Density of real eigenvalues at `z` from integrating the joint density
/// over the overlap.
pub fn marginal_density(params: EnsembleParams, z: f64) -> Result<f64> {
    JdfAtZ::new(params, z)?.marginal()
}

/// Closed-form density of real eigenvalues for even `N`,
/// `rho_1(z) + rho_2(z)`, with
///
/// * `rho_1 = e^{-z^2/(1+tau)} / sqrt(2 pi) * sum_{k<=N-2} phi_k(z)^2`
/// * `rho_2 = sqrt(N-1) / (sqrt(2 pi) (1+tau)) e^{-z^2/(2(1+tau))} phi_{N-1}(z)
///   int_0^z e^{-u^2/(2(1+tau))} phi_{N-2}(u) du`
///
/// where `phi_k` is the rescaled Hermite sequence.
pub fn fn_density(params: EnsembleParams, z: f64) -> Result<f64> {
    let n = params.n;
    let tau = params.tau;
    if n < 2 {
        return domain(format!("density needs N >= 2, got {n}"));
    }
    if n % 2 == 1 {
        return Err(Error::Unsupported(format!(
            "closed-form real density is for even N only, got N = {n}"
        )));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return domain(format!("closed-form real density needs 0 < tau < 1, got {tau}"));
    }
    if !z.is_finite() {
        return domain(format!("z must be finite, got {z}"));
    }
    let s = 1.0 + tau;
    let phi = phi_sequence_scaled(z, tau, n - 1)?;
    let mut sq = ScaledSum::new();
    for k in 0..=n - 2 {
        let m = phi.mantissa[k];
        sq.add_scaled(m * m, 2.0 * phi.ln_scale[k]);
    }
    let rho1 = sq.value().mul_exp(-z * z / s - LN_SQRT_2PI);

    // integrand e^{-u^2/(2s)} phi_{N-2}(u) in log form
    let ln_integrand = |u: f64| -> SignedLogValue {
        let p = phi_sequence_scaled(u, tau, n - 2).expect("finite u");
        SignedLogValue::from_f64(p.mantissa[n - 2]).mul_exp(p.ln_scale[n - 2] - u * u / (2.0 * s))
    };
    let mut ln_ref = f64::NEG_INFINITY;
    for i in 0..=64 {
        ln_ref = ln_ref.max(ln_integrand(z * i as f64 / 64.0).log_abs());
    }
    if !ln_ref.is_finite() {
        ln_ref = 0.0;
    }
    let inner = integrate(
        |u| ln_integrand(u).to_f64_scaled(ln_ref),
        0.0,
        z,
        1e-13,
        1e-12,
    )?;
    let outer = SignedLogValue::from_f64(phi.mantissa[n - 1])
        .mul_exp(phi.ln_scale[n - 1] - z * z / (2.0 * s) - LN_SQRT_2PI + 0.5 * ((n - 1) as f64).ln() - s.ln());
    let rho2 = outer * SignedLogValue::from_f64(inner.value).mul_exp(ln_ref);
    let v = (rho1 + rho2).to_f64();
    Ok(v.max(0.0))
}
