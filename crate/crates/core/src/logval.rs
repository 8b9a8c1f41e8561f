//! Signed numbers stored as `sign * exp(log_abs)`.
//!
//! The kernels of the finite-N density carry factorials and Gaussian
//! weights whose magnitudes leave the `f64` range long before the final
//! density does. Everything that can overflow travels as a
//! [`SignedLogValue`] and is only collapsed to a plain float at the end.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub};

/// A real number represented by its sign and the natural log of its
/// magnitude. Exact zero is `sign == 0` with `log_abs == -inf`.
#[derive(Clone, Copy, PartialEq)]
pub struct SignedLogValue {
    log_abs: f64,
    sign: i8,
}

impl SignedLogValue {
    pub const ZERO: Self = Self {
        log_abs: f64::NEG_INFINITY,
        sign: 0,
    };
    pub const ONE: Self = Self {
        log_abs: 0.0,
        sign: 1,
    };

    /// Builds a value from its parts. A `sign` of zero or a `log_abs` of
    /// `-inf` both produce exact zero.
    pub fn from_parts(log_abs: f64, sign: i8) -> Self {
        if sign == 0 || log_abs == f64::NEG_INFINITY {
            Self::ZERO
        } else {
            debug_assert!(!log_abs.is_nan());
            Self {
                log_abs,
                sign: sign.signum(),
            }
        }
    }

    /// `exp(log_abs)` with a positive sign.
    pub fn from_ln(log_abs: f64) -> Self {
        Self::from_parts(log_abs, 1)
    }

    pub fn from_f64(x: f64) -> Self {
        if x == 0.0 {
            Self::ZERO
        } else {
            Self {
                log_abs: x.abs().ln(),
                sign: if x > 0.0 { 1 } else { -1 },
            }
        }
    }

    #[inline]
    pub fn log_abs(self) -> f64 {
        self.log_abs
    }

    #[inline]
    pub fn sign(self) -> i8 {
        self.sign
    }

    #[inline]
    pub fn is_zero(self) -> bool {
        self.sign == 0
    }

    /// Collapses to `f64`; saturates to `±inf` or `0` outside the range.
    pub fn to_f64(self) -> f64 {
        if self.sign == 0 {
            0.0
        } else {
            f64::from(self.sign) * self.log_abs.exp()
        }
    }

    /// The value divided by `exp(shift)`, as a plain float.
    pub fn to_f64_scaled(self, shift: f64) -> f64 {
        if self.sign == 0 {
            0.0
        } else {
            f64::from(self.sign) * (self.log_abs - shift).exp()
        }
    }

    pub fn abs(self) -> Self {
        Self {
            log_abs: self.log_abs,
            sign: self.sign.abs(),
        }
    }

    /// Multiplies by `exp(ln_factor)`.
    pub fn mul_exp(self, ln_factor: f64) -> Self {
        if self.sign == 0 {
            self
        } else {
            Self {
                log_abs: self.log_abs + ln_factor,
                sign: self.sign,
            }
        }
    }

    pub fn scale(self, factor: f64) -> Self {
        self * Self::from_f64(factor)
    }

    pub fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Self::ONE;
        }
        if self.sign == 0 {
            return Self::ZERO;
        }
        let sign = if self.sign < 0 && n % 2 != 0 { -1 } else { 1 };
        Self {
            log_abs: self.log_abs * f64::from(n),
            sign,
        }
    }

    /// Compares magnitudes.
    pub fn cmp_abs(self, other: Self) -> Ordering {
        self.log_abs
            .partial_cmp(&other.log_abs)
            .unwrap_or(Ordering::Equal)
    }
}

impl Default for SignedLogValue {
    fn default() -> Self {
        Self::ZERO
    }
}

impl fmt::Debug for SignedLogValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.sign {
            0 => write!(f, "0"),
            s => write!(f, "{}exp({})", if s < 0 { "-" } else { "+" }, self.log_abs),
        }
    }
}

impl From<f64> for SignedLogValue {
    fn from(x: f64) -> Self {
        Self::from_f64(x)
    }
}

impl Neg for SignedLogValue {
    type Output = Self;
    fn neg(self) -> Self {
        Self {
            log_abs: self.log_abs,
            sign: -self.sign,
        }
    }
}

impl Mul for SignedLogValue {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        if self.sign == 0 || rhs.sign == 0 {
            Self::ZERO
        } else {
            Self {
                log_abs: self.log_abs + rhs.log_abs,
                sign: self.sign * rhs.sign,
            }
        }
    }
}

impl MulAssign for SignedLogValue {
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}

impl Div for SignedLogValue {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        assert!(rhs.sign != 0, "division of SignedLogValue by zero");
        if self.sign == 0 {
            Self::ZERO
        } else {
            Self {
                log_abs: self.log_abs - rhs.log_abs,
                sign: self.sign * rhs.sign,
            }
        }
    }
}

impl Add for SignedLogValue {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        if self.sign == 0 {
            return rhs;
        }
        if rhs.sign == 0 {
            return self;
        }
        let (big, small) = if self.log_abs >= rhs.log_abs {
            (self, rhs)
        } else {
            (rhs, self)
        };
        let d = (small.log_abs - big.log_abs).exp();
        if big.sign == small.sign {
            Self {
                log_abs: big.log_abs + d.ln_1p(),
                sign: big.sign,
            }
        } else if d == 1.0 {
            Self::ZERO
        } else {
            Self {
                log_abs: big.log_abs + (-d).ln_1p(),
                sign: big.sign,
            }
        }
    }
}

impl AddAssign for SignedLogValue {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl Sub for SignedLogValue {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self + (-rhs)
    }
}

/// Neumaier-compensated sum of terms that each arrive as
/// `mantissa * exp(ln_scale)`.
///
/// The running total is kept relative to the largest scale seen so far,
/// so terms spanning hundreds of orders of magnitude can be added without
/// overflow.
#[derive(Clone, Copy, Debug)]
pub struct ScaledSum {
    sum: f64,
    comp: f64,
    ln_scale: f64,
}

impl Default for ScaledSum {
    fn default() -> Self {
        Self::new()
    }
}

impl ScaledSum {
    pub fn new() -> Self {
        Self {
            sum: 0.0,
            comp: 0.0,
            ln_scale: f64::NEG_INFINITY,
        }
    }

    pub fn add_scaled(&mut self, mantissa: f64, ln_scale: f64) {
        if mantissa == 0.0 {
            return;
        }
        let term = if ln_scale > self.ln_scale {
            if self.ln_scale.is_finite() {
                let r = (self.ln_scale - ln_scale).exp();
                self.sum *= r;
                self.comp *= r;
            }
            self.ln_scale = ln_scale;
            mantissa
        } else {
            mantissa * (ln_scale - self.ln_scale).exp()
        };
        let t = self.sum + term;
        if self.sum.abs() >= term.abs() {
            self.comp += (self.sum - t) + term;
        } else {
            self.comp += (term - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn add(&mut self, v: SignedLogValue) {
        if !v.is_zero() {
            self.add_scaled(f64::from(v.sign()), v.log_abs());
        }
    }

    pub fn add_f64(&mut self, x: f64) {
        self.add_scaled(x, 0.0);
    }

    pub fn value(&self) -> SignedLogValue {
        if !self.ln_scale.is_finite() {
            return SignedLogValue::ZERO;
        }
        SignedLogValue::from_f64(self.sum + self.comp).mul_exp(self.ln_scale)
    }
}
