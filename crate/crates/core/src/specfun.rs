//! Scalar special functions: monic Hermite polynomials, the rescaled
//! Hermite sequence used by the kernels, the upper incomplete gamma
//! function for integer order and the Gaussian tail integral.

use crate::error::{domain, Result};
use crate::logval::SignedLogValue;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_741_780_329_736_406;
const SQRT_PI_OVER_2: f64 = 1.253_314_137_315_500_251_207_882_642_405_5;

/// Values `He_0(x) ..= He_{n_max}(x)` of the monic (probabilists')
/// Hermite polynomials at one argument.
#[derive(Clone, Debug)]
pub struct HermiteSequence {
    pub argument: f64,
    pub values: Vec<SignedLogValue>,
}

impl HermiteSequence {
    /// `He_n(x)`; negative orders are zero.
    pub fn get(&self, n: i64) -> SignedLogValue {
        if n < 0 {
            SignedLogValue::ZERO
        } else {
            self.values[n as usize]
        }
    }

    pub fn max_order(&self) -> usize {
        self.values.len() - 1
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.to_f64()).collect()
    }
}

/// Forward three-term recurrence `He_{n+1} = x He_n - n He_{n-1}`,
/// carried out in log-magnitude arithmetic so large orders and arguments
/// do not overflow.
pub fn hermite_sequence(x: f64, n_max: usize) -> Result<HermiteSequence> {
    if !x.is_finite() {
        return domain(format!("Hermite argument must be finite, got {x}"));
    }
    let xs = SignedLogValue::from_f64(x);
    let mut values = Vec::with_capacity(n_max + 1);
    values.push(SignedLogValue::ONE);
    if n_max >= 1 {
        values.push(xs);
    }
    for n in 1..n_max {
        let next = xs * values[n] - values[n - 1].scale(n as f64);
        values.push(next);
    }
    Ok(HermiteSequence {
        argument: x,
        values,
    })
}

/// `phi_k = tau^{k/2} He_k(z / sqrt(tau)) / sqrt(k!)` stored as
/// `mantissa[k] * exp(ln_scale[k])`.
///
/// The mantissas are renormalised whenever they grow past `2^500`, so the
/// sequence stays finite for any order.
#[derive(Clone, Debug)]
pub struct ScaledPhi {
    pub mantissa: Vec<f64>,
    pub ln_scale: Vec<f64>,
}

impl ScaledPhi {
    /// `phi_k` relative to `exp(ln_ref)`; negative `k` yields zero.
    #[inline]
    pub fn at(&self, k: i64, ln_ref: f64) -> f64 {
        if k < 0 {
            return 0.0;
        }
        let k = k as usize;
        let m = self.mantissa[k];
        let d = self.ln_scale[k] - ln_ref;
        if d == 0.0 {
            m
        } else {
            m * d.exp()
        }
    }

    pub fn len(&self) -> usize {
        self.mantissa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mantissa.is_empty()
    }
}

#[allow(clippy::excessive_precision)]
const RESCALE_AT: f64 = 3.273_390_607_896_141_9e150; // 2^500
#[allow(clippy::excessive_precision)]
const LN_RESCALE: f64 = 346.573_590_279_972_65; // 500 ln 2

pub(crate) fn phi_sequence_scaled(z: f64, tau: f64, n_max: usize) -> Result<ScaledPhi> {
    if !(tau > 0.0) {
        return domain(format!("phi sequence needs tau > 0, got {tau}"));
    }
    if !z.is_finite() {
        return domain(format!("phi sequence needs finite z, got {z}"));
    }
    let mut mantissa = Vec::with_capacity(n_max + 1);
    let mut ln_scale = Vec::with_capacity(n_max + 1);
    mantissa.push(1.0);
    ln_scale.push(0.0);
    if n_max >= 1 {
        mantissa.push(z);
        ln_scale.push(0.0);
    }
    // state (prev, cur) at common scale `scale`
    let mut prev = 1.0;
    let mut cur = z;
    let mut scale = 0.0;
    for k in 1..n_max {
        let kf = k as f64;
        let next = z * cur / (kf + 1.0).sqrt() - tau * (kf / (kf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
        if cur.abs() > RESCALE_AT {
            cur /= RESCALE_AT;
            prev /= RESCALE_AT;
            scale += LN_RESCALE;
        }
        mantissa.push(cur);
        ln_scale.push(scale);
    }
    Ok(ScaledPhi { mantissa, ln_scale })
}

/// Rescaled Hermite values `phi_k = tau^{k/2} He_k(z/sqrt(tau)) / sqrt(k!)`
/// for `k = 0..=n_max`, via
/// `phi_{k+1} = z phi_k / sqrt(k+1) - tau sqrt(k/(k+1)) phi_{k-1}`.
///
/// Entries beyond the `f64` range saturate; the kernels use the
/// internally rescaled form instead.
pub fn phi_sequence(z: f64, tau: f64, n_max: usize) -> Result<Vec<f64>> {
    let s = phi_sequence_scaled(z, tau, n_max)?;
    Ok(s.mantissa
        .iter()
        .zip(&s.ln_scale)
        .map(|(m, l)| if *l == 0.0 { *m } else { m * l.exp() })
        .collect())
}

/// `ln n!`.
pub fn ln_factorial(n: u64) -> f64 {
    if n < 2 {
        0.0
    } else {
        libm::lgamma(n as f64 + 1.0)
    }
}

/// Error term of Stirling's formula,
/// `ln n! - (n + 1/2) ln n + n - ln sqrt(2 pi)`.
fn stirling_error(n: f64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n <= 15.0 {
        return libm::lgamma(n + 1.0) - (n + 0.5) * n.ln() + n - LN_SQRT_2PI;
    }
    let nn = n * n;
    if n > 500.0 {
        (S0 - S1 / nn) / n
    } else if n > 80.0 {
        (S0 - (S1 - S2 / nn) / nn) / n
    } else if n > 35.0 {
        (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / n
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / n
    }
}

/// Deviance term `x ln(x / m) + m - x`, accurate when `x ~ m`.
fn deviance(x: f64, m: f64) -> f64 {
    if (x - m).abs() < 0.1 * (x + m) {
        let v = (x - m) / (x + m);
        let mut s = (x - m) * v;
        let mut ej = 2.0 * x * v;
        let v2 = v * v;
        for j in 1..1000 {
            ej *= v2;
            let s1 = s + ej / f64::from(2 * j + 1);
            if s1 == s {
                return s1;
            }
            s = s1;
        }
        s
    } else {
        x * (x / m).ln() + m - x
    }
}

/// `ln(e^{-m} m^k / k!)` computed without cancellation between its
/// large pieces.
fn ln_poisson_pmf(k: u64, m: f64) -> f64 {
    if m == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if k == 0 {
        return -m;
    }
    let kf = k as f64;
    -stirling_error(kf) - deviance(kf, m) - LN_SQRT_2PI - 0.5 * kf.ln()
}

/// `ln Q(n+1, x) = ln(Gamma(n+1, x) / n!)`.
///
/// For integer order the regularised upper gamma function is the Poisson
/// distribution function `e^{-x} sum_{k<=n} x^k / k!`; the sum is taken
/// outward from its largest term so every addend is positive.
pub fn ln_regularized_upper_gamma(n: u64, x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return domain(format!("incomplete gamma needs x >= 0, got {x}"));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if !x.is_finite() {
        return Ok(f64::NEG_INFINITY);
    }
    let mode = (x.floor() as u64).min(n);
    let ln_peak = ln_poisson_pmf(mode, x);
    let mut total = 1.0;
    // downward k = mode-1, ..., 0
    let mut r = 1.0;
    let mut k = mode;
    while k > 0 {
        r *= k as f64 / x;
        total += r;
        if r < 1e-18 * total {
            break;
        }
        k -= 1;
    }
    // upward k = mode+1, ..., n
    let mut r = 1.0;
    let mut k = mode;
    while k < n {
        k += 1;
        r *= x / k as f64;
        total += r;
        if r < 1e-18 * total {
            break;
        }
    }
    Ok((ln_peak + total.ln()).min(0.0))
}

/// `Gamma(n+1, x) = int_x^inf u^n e^{-u} du`.
pub fn upper_incomplete_gamma(n: u64, x: f64) -> Result<SignedLogValue> {
    let lq = ln_regularized_upper_gamma(n, x)?;
    Ok(SignedLogValue::from_ln(ln_factorial(n) + lq))
}

/// Step kernel `theta_N(x) = Gamma(N+1, N x) / Gamma(N+1)`.
///
/// Non-positive `x` returns 1. As `N` grows it tends to the indicator of
/// `x < 1`.
pub fn theta_step(n: u64, x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x <= 0.0 {
        return 1.0;
    }
    match ln_regularized_upper_gamma(n, n as f64 * x) {
        Ok(l) => l.exp(),
        Err(_) => f64::NAN,
    }
}

/// `int_x^inf e^{-u^2/2} du`.
pub fn gaussian_tail(x: f64) -> f64 {
    SQRT_PI_OVER_2 * libm::erfc(x * std::f64::consts::FRAC_1_SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::integrate;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn hermite_small_orders() {
        let h = hermite_sequence(2.0, 2).unwrap().to_f64_vec();
        for (a, b) in h.iter().zip([1.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-14);
        }
        let h = hermite_sequence(1.0, 3).unwrap().to_f64_vec();
        assert!((h[3] + 2.0).abs() < 1e-14);
        let h0 = hermite_sequence(0.0, 4).unwrap().to_f64_vec();
        for (a, b) in h0.iter().zip([1.0, 0.0, -1.0, 0.0, 3.0]) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn hermite_rejects_non_finite() {
        assert!(hermite_sequence(f64::NAN, 3).is_err());
        assert!(hermite_sequence(f64::INFINITY, 3).is_err());
    }

    #[test]
    fn hermite_recurrence_residual() {
        for &x in &[-50.0, -7.3, -0.4, 0.0, 1.1, 12.0, 50.0] {
            let h = hermite_sequence(x, 200).unwrap();
            for n in 1..200usize {
                let lhs = h.values[n + 1];
                let a = SignedLogValue::from_f64(x) * h.values[n];
                let b = h.values[n - 1].scale(n as f64);
                let scale = lhs.abs().log_abs().max(a.abs().log_abs()).max(b.abs().log_abs());
                let res = (lhs - a + b).to_f64_scaled(scale).abs();
                assert!(res <= 1e-10, "x={x} n={n} res={res}");
            }
        }
    }

    #[test]
    fn phi_first_terms() {
        for &(z, tau) in &[(0.3, 0.2), (-1.7, 0.9), (4.0, 0.5)] {
            let p = phi_sequence(z, tau, 2).unwrap();
            assert_eq!(p[0], 1.0);
            assert_eq!(p[1], z);
            assert!(rel(p[2], (z * z - tau) / 2f64.sqrt()) < 1e-14);
        }
        assert!(phi_sequence(1.0, 0.0, 3).is_err());
        assert!(phi_sequence(1.0, -0.1, 3).is_err());
    }

    #[test]
    fn phi_reproduces_hermite() {
        for &tau in &[0.05, 0.3, 0.7, 0.99] {
            for &z in &[-3.0, -0.2, 0.0, 1.5, 6.0] {
                let phi = phi_sequence_scaled(z, tau, 100).unwrap();
                let he = hermite_sequence(z / tau.sqrt(), 100).unwrap();
                for k in 0..=100usize {
                    // phi_k sqrt(k!) / tau^{k/2}
                    let lhs = SignedLogValue::from_f64(phi.mantissa[k])
                        .mul_exp(phi.ln_scale[k] + 0.5 * ln_factorial(k as u64) - 0.5 * k as f64 * tau.ln());
                    let rhs = he.values[k];
                    if rhs.is_zero() {
                        assert!(lhs.to_f64().abs() < 1e-12);
                        continue;
                    }
                    let scale = rhs.log_abs();
                    let d = (lhs - rhs).to_f64_scaled(scale).abs();
                    // near the zeros of He_k both sides are tiny compared with
                    // neighbouring orders; measure against the local envelope.
                    let env = he.values[k.saturating_sub(1)].log_abs().max(scale);
                    let d_env = (lhs - rhs).to_f64_scaled(env).abs();
                    assert!(d < 1e-10 || d_env < 1e-10, "tau={tau} z={z} k={k} d={d}");
                }
            }
        }
    }

    #[test]
    fn incomplete_gamma_examples() {
        let g = upper_incomplete_gamma(0, 1.0).unwrap().to_f64();
        assert!(rel(g, (-1.0f64).exp()) < 1e-15);
        let g = upper_incomplete_gamma(5, 0.0).unwrap().to_f64();
        assert!(rel(g, 120.0) < 1e-15);
        // quadrature oracle of the defining integral
        let oracle = integrate(|u| u.powi(10) * (-u).exp(), 10.0, 200.0, 0.0, 1e-13)
            .unwrap()
            .value;
        let g = upper_incomplete_gamma(10, 10.0).unwrap().to_f64();
        assert!(rel(g, oracle) < 1e-12, "{g} vs {oracle}");
        assert!(upper_incomplete_gamma(3, -0.5).is_err());
    }

    #[test]
    fn incomplete_gamma_against_quadrature_grid() {
        for &n in &[1u64, 3, 17, 40, 120] {
            for &x in &[0.1, 2.0, 15.0, 60.0, 150.0] {
                let lo = x;
                let hi = x + 60.0 + 20.0 * (n as f64).sqrt() + n as f64 * 2.0;
                // integrate the regularised integrand e^{-u} u^n / n! in log space
                let lnf = ln_factorial(n);
                let oracle = integrate(
                    |u| ((n as f64) * u.ln() - u - lnf).exp(),
                    lo,
                    hi,
                    0.0,
                    1e-13,
                )
                .unwrap()
                .value;
                let q = ln_regularized_upper_gamma(n, x).unwrap().exp();
                if oracle > 1e-250 {
                    assert!(rel(q, oracle) < 1e-11, "n={n} x={x}: {q} vs {oracle}");
                }
            }
        }
    }

    #[test]
    fn incomplete_gamma_relations() {
        for &n in &[1u64, 2, 9, 33, 150, 400] {
            let mut prev = f64::INFINITY;
            for i in 0..60 {
                let x = i as f64 * 0.25 * (1.0 + n as f64 / 10.0);
                let g = upper_incomplete_gamma(n, x).unwrap();
                assert!(g.log_abs() <= ln_factorial(n) + 1e-13);
                assert!(g.log_abs() <= prev + 1e-13);
                prev = g.log_abs();
                // Gamma(n+1,x) = n Gamma(n,x) + x^n e^{-x}
                let lower = upper_incomplete_gamma(n - 1, x).unwrap().scale(n as f64);
                let extra = if x == 0.0 {
                    SignedLogValue::ZERO
                } else {
                    SignedLogValue::from_ln(n as f64 * x.ln() - x)
                };
                let rhs = lower + extra;
                let d = (g - rhs).to_f64_scaled(g.log_abs()).abs();
                assert!(d < 1e-12, "n={n} x={x} d={d}");
            }
        }
    }

    #[test]
    fn theta_step_values() {
        assert_eq!(theta_step(50, 0.0), 1.0);
        assert_eq!(theta_step(50, -3.0), 1.0);
        assert!(rel(theta_step(1, 1.0), 2.0 * (-1.0f64).exp()) < 1e-14);
        assert!(theta_step(2000, 2.0) < 1e-100);
        assert!(theta_step(2000, 0.5) > 1.0 - 1e-15);
        let mut prev = 1.0;
        for n in [10u64, 100, 1000] {
            let v = theta_step(n, 1.3);
            assert!(v < prev);
            prev = v;
        }
        for i in 0..100 {
            let v = theta_step(37, i as f64 * 0.05 - 1.0);
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn gaussian_tail_values() {
        assert!(rel(gaussian_tail(0.0), (std::f64::consts::PI / 2.0).sqrt()) < 1e-15);
        assert!(rel(gaussian_tail(-40.0), (2.0 * std::f64::consts::PI).sqrt()) < 1e-15);
        let oracle = integrate(|u| (-0.5 * u * u).exp(), 1.0, 40.0, 0.0, 1e-13)
            .unwrap()
            .value;
        assert!(rel(gaussian_tail(1.0), oracle) < 1e-13);
        let mut prev = f64::INFINITY;
        for i in 0..161 {
            let x = -8.0 + 0.1 * i as f64;
            let v = gaussian_tail(x);
            assert!(v > 0.0 && v < prev);
            prev = v;
        }
    }

    #[test]
    fn gaussian_tail_far_tail_against_quadrature() {
        for &x in &[2.5, 5.0, 8.0] {
            let oracle = integrate(|u| (-0.5 * u * u).exp(), x, x + 30.0, 0.0, 1e-13)
                .unwrap()
                .value;
            assert!(rel(gaussian_tail(x), oracle) < 1e-13, "x={x}");
        }
    }

    proptest! {
        #[test]
        fn gaussian_tail_symmetry(x in -30.0f64..30.0) {
            let s = gaussian_tail(x) + gaussian_tail(-x);
            prop_assert!((s - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-14);
        }

        #[test]
        fn theta_is_bounded(n in 1u64..500, x in -2.0f64..5.0) {
            let v = theta_step(n, x);
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
