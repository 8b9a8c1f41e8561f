//! The Hermite cross-product kernels `P_m`, `R_m`, `T_m` that build the
//! finite-N joint density.
//!
//! Two independent evaluations are provided: a direct sum in the rescaled
//! Hermite basis ([`prt_eval`]) and a bottom-up recurrence over raw Hermite
//! values in log arithmetic ([`prt_recurrence_path`]).

use std::collections::BTreeMap;

use crate::error::{domain, Error, Result};
use crate::logval::{ScaledSum, SignedLogValue};
use crate::specfun::{hermite_sequence, ln_factorial, phi_sequence_scaled, upper_incomplete_gamma};

/// Matrix dimension and asymmetry parameter of the elliptic ensemble.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnsembleParams {
    pub n: usize,
    pub tau: f64,
}

impl EnsembleParams {
    pub fn new(n: usize, tau: f64) -> Result<Self> {
        if n == 0 {
            return domain("matrix dimension must be positive");
        }
        if !(0.0..=1.0).contains(&tau) {
            return domain(format!("tau must lie in [0, 1], got {tau}"));
        }
        Ok(Self { n, tau })
    }

    /// Weak non-Hermiticity: `tau = 1 - a^2 / (2n)`.
    pub fn weak(n: usize, a: f64) -> Result<Self> {
        if !(a > 0.0) {
            return domain(format!("asymmetry a must be positive, got {a}"));
        }
        Self::new(n, 1.0 - a * a / (2.0 * n as f64))
    }
}

/// `(P_m, R_m, T_m)` at one order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelTriple {
    pub p: SignedLogValue,
    pub r: SignedLogValue,
    pub t: SignedLogValue,
}

impl KernelTriple {
    pub const ZERO: Self = Self {
        p: SignedLogValue::ZERO,
        r: SignedLogValue::ZERO,
        t: SignedLogValue::ZERO,
    };
}

/// Kernel values at a point `z` for a set of orders.
#[derive(Clone, Debug)]
pub struct PrtBundle {
    pub z: f64,
    pub orders: BTreeMap<i64, KernelTriple>,
}

impl PrtBundle {
    /// The triple at order `m`. Negative orders are zero whether or not
    /// they were requested.
    ///
    /// # Panics
    /// If a non-negative order was not computed.
    pub fn get(&self, m: i64) -> KernelTriple {
        if m < 0 {
            return KernelTriple::ZERO;
        }
        *self
            .orders
            .get(&m)
            .unwrap_or_else(|| panic!("kernel order {m} was not evaluated"))
    }

    pub fn p(&self, m: i64) -> SignedLogValue {
        self.get(m).p
    }

    pub fn r(&self, m: i64) -> SignedLogValue {
        self.get(m).r
    }

    pub fn t(&self, m: i64) -> SignedLogValue {
        self.get(m).t
    }
}

fn check_orders(orders: &[i64]) -> Result<()> {
    match orders.iter().find(|&&m| m < -1) {
        Some(m) => domain(format!("kernel order must be >= -1, got {m}")),
        None => Ok(()),
    }
}

/// Evaluates `P_m`, `R_m`, `T_m` at `z` for every requested order.
///
/// With `phi_k = tau^{k/2} He_k(z/sqrt(tau)) / sqrt(k!)`:
///
/// * `P_m = m! sum_{k<=m} a_k`, `a_k = (k+1) phi_k^2 - sqrt(k(k+1)) phi_{k-1} phi_{k+1}`
/// * `T_m = m! sum_{k<=m} k a_k`
/// * `R_m = m!/2 sum_{k<=m} [(k+2) sqrt(k+1) phi_{k+1} phi_k - sqrt(k(k+1)(k+2)) phi_{k+2} phi_{k-1}]`
///
/// The summand `a_k` telescopes to `sum_{j<=k} tau^{k-j} phi_j^2` and is
/// accumulated as `a_k = tau a_{k-1} + phi_k^2`, which keeps every term
/// positive. `tau = 0` uses the incomplete-gamma closed forms.
pub fn prt_eval(params: EnsembleParams, z: f64, orders: &[i64]) -> Result<PrtBundle> {
    check_orders(orders)?;
    let tau = params.tau;
    if tau >= 1.0 {
        return Err(Error::Unsupported(
            "kernels are not evaluated at tau = 1 (the density degenerates)".into(),
        ));
    }
    if !z.is_finite() {
        return domain(format!("z must be finite, got {z}"));
    }
    let mut out = BTreeMap::new();
    let Some(&m_max) = orders.iter().max() else {
        return Ok(PrtBundle { z, orders: out });
    };
    if m_max < 0 {
        for &m in orders {
            out.insert(m, KernelTriple::ZERO);
        }
        return Ok(PrtBundle { z, orders: out });
    }
    if tau == 0.0 {
        for &m in orders {
            out.insert(m, ginibre_triple(z, m)?);
        }
        return Ok(PrtBundle { z, orders: out });
    }

    let m_max = m_max as usize;
    let phi = phi_sequence_scaled(z, tau, m_max + 2)?;
    let mut wanted = vec![false; m_max + 1];
    for &m in orders {
        if m >= 0 {
            wanted[m as usize] = true;
        } else {
            out.insert(m, KernelTriple::ZERO);
        }
    }

    let mut p_sum = ScaledSum::new();
    let mut t_sum = ScaledSum::new();
    let mut r_sum = ScaledSum::new();
    // a_k relative to exp(2 * ln_scale[k])
    let mut a = 0.0;
    let mut prev_scale = 0.0;
    for k in 0..=m_max {
        let s = phi.ln_scale[k];
        let mk = phi.mantissa[k];
        a = tau * a * (2.0 * (prev_scale - s)).exp() + mk * mk;
        prev_scale = s;
        p_sum.add_scaled(a, 2.0 * s);
        t_sum.add_scaled(k as f64 * a, 2.0 * s);

        let ki = k as i64;
        let kf = k as f64;
        let b = (kf + 2.0) * (kf + 1.0).sqrt() * phi.at(ki + 1, s) * mk
            - (kf * (kf + 1.0) * (kf + 2.0)).sqrt() * phi.at(ki + 2, s) * phi.at(ki - 1, s);
        r_sum.add_scaled(b, 2.0 * s);

        if wanted[k] {
            let lf = ln_factorial(k as u64);
            out.insert(
                ki,
                KernelTriple {
                    p: p_sum.value().mul_exp(lf),
                    r: r_sum.value().mul_exp(lf - std::f64::consts::LN_2),
                    t: t_sum.value().mul_exp(lf),
                },
            );
        }
    }
    Ok(PrtBundle { z, orders: out })
}

/// `P_m = e^{z^2} Gamma(m+1, z^2)`, `R_m = z P_m`, `T_m = m z^2 P_{m-1}`.
fn ginibre_triple(z: f64, m: i64) -> Result<KernelTriple> {
    if m < 0 {
        return Ok(KernelTriple::ZERO);
    }
    let z2 = z * z;
    let p_of = |k: i64| -> Result<SignedLogValue> {
        if k < 0 {
            Ok(SignedLogValue::ZERO)
        } else {
            Ok(upper_incomplete_gamma(k as u64, z2)?.mul_exp(z2))
        }
    };
    let p = p_of(m)?;
    let zs = SignedLogValue::from_f64(z);
    Ok(KernelTriple {
        p,
        r: zs * p,
        t: p_of(m - 1)?.scale(m as f64 * z2),
    })
}

/// Builds the kernels bottom-up for orders `-1..=m_max` via
/// `P_m = m P_{m-1} + A_m`, `R_m = m R_{m-1} + B_m`, `T_m = m T_{m-1} + m A_m`
/// with, at argument `x = z / sqrt(tau)`,
///
/// * `A_m = tau^m [(m+1) He_m^2 - m He_{m+1} He_{m-1}]`
/// * `2 B_m = tau^{m+1/2} [(m+2) He_{m+1} He_m - m He_{m+2} He_{m-1}]`
///
/// Every quantity stays in log arithmetic.
pub fn prt_recurrence_path(params: EnsembleParams, z: f64, m_max: i64) -> Result<PrtBundle> {
    let tau = params.tau;
    if !(tau > 0.0) {
        return domain("the recurrence path needs tau > 0");
    }
    if tau >= 1.0 {
        return Err(Error::Unsupported(
            "kernels are not evaluated at tau = 1 (the density degenerates)".into(),
        ));
    }
    check_orders(&[m_max])?;
    if !z.is_finite() {
        return domain(format!("z must be finite, got {z}"));
    }
    let mut out = BTreeMap::new();
    out.insert(-1, KernelTriple::ZERO);
    if m_max < 0 {
        return Ok(PrtBundle { z, orders: out });
    }
    let he = hermite_sequence(z / tau.sqrt(), m_max as usize + 2)?;
    let ln_tau = tau.ln();
    let mut cur = KernelTriple::ZERO;
    for m in 0..=m_max {
        let mf = m as f64;
        let a_m = (he.get(m) * he.get(m)).scale(mf + 1.0) - (he.get(m + 1) * he.get(m - 1)).scale(mf);
        let a_m = a_m.mul_exp(mf * ln_tau);
        let b_m = (he.get(m + 1) * he.get(m)).scale(mf + 2.0) - (he.get(m + 2) * he.get(m - 1)).scale(mf);
        let b_m = b_m.mul_exp((mf + 0.5) * ln_tau - std::f64::consts::LN_2);
        cur = KernelTriple {
            p: cur.p.scale(mf) + a_m,
            r: cur.r.scale(mf) + b_m,
            t: cur.t.scale(mf) + a_m.scale(mf),
        };
        out.insert(m, cur);
    }
    Ok(PrtBundle { z, orders: out })
}

/// Relative residual of the kernel identity
///
/// `P_N - P_{N-1}(1+tau-z^2) - (N-1)(2 tau^2+N-1) P_{N-2} - 2z R_{N-1} + (1-tau^2)(N-1) T_{N-2} = 0`,
///
/// divided by the largest absolute summand.
pub fn identity_residual(params: EnsembleParams, z: f64) -> Result<f64> {
    let n = params.n as i64;
    if n < 3 {
        return domain(format!("the identity needs N >= 3, got {n}"));
    }
    let tau = params.tau;
    let b = prt_eval(params, z, &[n, n - 1, n - 2])?;
    let nf = n as f64;
    let terms = [
        b.p(n),
        -b.p(n - 1).scale(1.0 + tau - z * z),
        -b.p(n - 2).scale((nf - 1.0) * (2.0 * tau * tau + nf - 1.0)),
        -b.r(n - 1).scale(2.0 * z),
        b.t(n - 2).scale((1.0 - tau * tau) * (nf - 1.0)),
    ];
    let biggest = terms
        .iter()
        .map(|v| v.log_abs())
        .fold(f64::NEG_INFINITY, f64::max);
    let mut sum = ScaledSum::new();
    for v in terms {
        sum.add(v);
    }
    Ok(sum.value().to_f64_scaled(biggest).abs())
}
