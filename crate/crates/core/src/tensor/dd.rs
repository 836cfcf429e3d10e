//! Double-double arithmetic: an unevaluated sum `hi + lo` of two `f64`s with
//! `|lo| <= ulp(hi) / 2`, giving roughly 106 bits of significand.
//!
//! Used as a high-precision reference element type, e.g. for central
//! differences that must not be swamped by rounding. Arithmetic, `sqrt`,
//! `exp`, `ln`, hyperbolic and trigonometric functions are accurate to a few
//! units in the last double-double place over the ranges a model produces.

use std::cmp::Ordering;
use std::f64::consts;
use std::fmt;
use std::num::FpCategory;
use std::ops::{Add, Div, Mul, Neg, Rem, Sub};

use num_traits::{Float, FromPrimitive, Num, NumCast, One, ToPrimitive, Zero};

#[derive(Clone, Copy, Default, PartialEq)]
pub struct DoubleDouble {
    hi: f64,
    lo: f64,
}

const LN2: DoubleDouble = DoubleDouble {
    hi: consts::LN_2,
    lo: 2.3190468138462996e-17,
};
const LN10: DoubleDouble = DoubleDouble {
    hi: consts::LN_10,
    lo: -2.1707562233822494e-16,
};
const PI: DoubleDouble = DoubleDouble {
    hi: consts::PI,
    lo: 1.2246467991473532e-16,
};
const TWO_PI: DoubleDouble = DoubleDouble {
    hi: consts::TAU,
    lo: 2.4492935982947064e-16,
};
const EPS: f64 = 4.93038065763132e-32;

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn fast_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl DoubleDouble {
    pub const fn from_f64(v: f64) -> Self {
        DoubleDouble { hi: v, lo: 0.0 }
    }

    /// Normalizes `hi + lo`.
    pub fn new(hi: f64, lo: f64) -> Self {
        let (hi, lo) = two_sum(hi, lo);
        DoubleDouble { hi, lo }
    }

    pub fn hi(self) -> f64 {
        self.hi
    }

    pub fn lo(self) -> f64 {
        self.lo
    }

    fn from_pair((hi, lo): (f64, f64)) -> Self {
        DoubleDouble { hi, lo }
    }

    fn scale_pow2(self, f: f64) -> Self {
        DoubleDouble {
            hi: self.hi * f,
            lo: self.lo * f,
        }
    }

    fn mul_f64(self, b: f64) -> Self {
        let (p, e) = two_prod(self.hi, b);
        Self::from_pair(fast_two_sum(p, e + self.lo * b))
    }

    fn square(self) -> Self {
        self * self
    }

    /// `exp(x) - 1` by Taylor series; intended for `|x| <= 1`.
    fn expm1_series(x: Self) -> Self {
        let mut term = x;
        let mut sum = x;
        for n in 2..200 {
            term = term * x / Self::from_f64(n as f64);
            sum = sum + term;
            if term.hi.abs() <= EPS * sum.hi.abs() {
                break;
            }
        }
        sum
    }

    /// `sin(x)` for `|x| <= pi`.
    fn sin_series(x: Self) -> Self {
        let x2 = x.square();
        let mut term = x;
        let mut sum = x;
        for n in (2..400).step_by(2) {
            term = -(term * x2) / Self::from_f64((n * (n + 1)) as f64);
            sum = sum + term;
            if term.hi.abs() <= EPS * sum.hi.abs().max(EPS) {
                break;
            }
        }
        sum
    }

    fn reduce_two_pi(self) -> Self {
        let k = (self.hi / TWO_PI.hi).round();
        self - TWO_PI.mul_f64(k)
    }
}

impl fmt::Debug for DoubleDouble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:e} + {:e}", self.hi, self.lo)
    }
}

impl fmt::Display for DoubleDouble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.hi, f)
    }
}

impl From<f64> for DoubleDouble {
    fn from(v: f64) -> Self {
        Self::from_f64(v)
    }
}

impl PartialOrd for DoubleDouble {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match self.hi.partial_cmp(&other.hi)? {
            Ordering::Equal => self.lo.partial_cmp(&other.lo),
            o => Some(o),
        }
    }
}

impl Neg for DoubleDouble {
    type Output = Self;
    fn neg(self) -> Self {
        DoubleDouble {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Add for DoubleDouble {
    type Output = Self;
    fn add(self, b: Self) -> Self {
        let (s, e) = two_sum(self.hi, b.hi);
        if !s.is_finite() {
            return Self::from_f64(s);
        }
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = fast_two_sum(s, e + t);
        Self::from_pair(fast_two_sum(s, e + f))
    }
}

impl Sub for DoubleDouble {
    type Output = Self;
    fn sub(self, b: Self) -> Self {
        self + -b
    }
}

impl Mul for DoubleDouble {
    type Output = Self;
    fn mul(self, b: Self) -> Self {
        let (p, e) = two_prod(self.hi, b.hi);
        if !p.is_finite() {
            return Self::from_f64(p);
        }
        Self::from_pair(fast_two_sum(p, e + (self.hi * b.lo + self.lo * b.hi)))
    }
}

impl Div for DoubleDouble {
    type Output = Self;
    fn div(self, b: Self) -> Self {
        let q1 = self.hi / b.hi;
        if !q1.is_finite() || b.hi == 0.0 {
            return Self::from_f64(q1);
        }
        let r = self - b.mul_f64(q1);
        let q2 = r.hi / b.hi;
        let r = r - b.mul_f64(q2);
        let q3 = r.hi / b.hi;
        Self::from_pair(fast_two_sum(q1, q2)) + Self::from_f64(q3)
    }
}

impl Rem for DoubleDouble {
    type Output = Self;
    fn rem(self, b: Self) -> Self {
        self - (self / b).trunc() * b
    }
}

impl Zero for DoubleDouble {
    fn zero() -> Self {
        Self::from_f64(0.0)
    }
    fn is_zero(&self) -> bool {
        self.hi == 0.0
    }
}

impl One for DoubleDouble {
    fn one() -> Self {
        Self::from_f64(1.0)
    }
}

impl Num for DoubleDouble {
    type FromStrRadixErr = <f64 as Num>::FromStrRadixErr;
    fn from_str_radix(s: &str, radix: u32) -> Result<Self, Self::FromStrRadixErr> {
        f64::from_str_radix(s, radix).map(Self::from_f64)
    }
}

impl ToPrimitive for DoubleDouble {
    fn to_i64(&self) -> Option<i64> {
        let t = self.trunc();
        t.hi.to_i64().and_then(|h| h.checked_add(t.lo.to_i64()?))
    }
    fn to_u64(&self) -> Option<u64> {
        self.to_i64().and_then(|v| v.to_u64())
    }
    fn to_f64(&self) -> Option<f64> {
        Some(self.hi + self.lo)
    }
}

impl FromPrimitive for DoubleDouble {
    fn from_i64(n: i64) -> Option<Self> {
        let hi = n as f64;
        Some(Self::new(hi, (n - hi as i64) as f64))
    }
    fn from_u64(n: u64) -> Option<Self> {
        let hi = n as f64;
        Some(Self::new(hi, (n as i128 - hi as i128) as f64))
    }
    fn from_f64(n: f64) -> Option<Self> {
        Some(Self::from_f64(n))
    }
}

impl NumCast for DoubleDouble {
    fn from<T: ToPrimitive>(n: T) -> Option<Self> {
        n.to_f64().map(Self::from_f64)
    }
}

impl Float for DoubleDouble {
    fn nan() -> Self {
        Self::from_f64(f64::NAN)
    }
    fn infinity() -> Self {
        Self::from_f64(f64::INFINITY)
    }
    fn neg_infinity() -> Self {
        Self::from_f64(f64::NEG_INFINITY)
    }
    fn neg_zero() -> Self {
        Self::from_f64(-0.0)
    }
    fn min_value() -> Self {
        Self::from_f64(f64::MIN)
    }
    fn min_positive_value() -> Self {
        Self::from_f64(f64::MIN_POSITIVE)
    }
    fn epsilon() -> Self {
        Self::from_f64(EPS)
    }
    fn max_value() -> Self {
        Self::from_f64(f64::MAX)
    }
    fn is_nan(self) -> bool {
        self.hi.is_nan()
    }
    fn is_infinite(self) -> bool {
        self.hi.is_infinite()
    }
    fn is_finite(self) -> bool {
        self.hi.is_finite()
    }
    fn is_normal(self) -> bool {
        self.hi.is_normal()
    }
    fn classify(self) -> FpCategory {
        self.hi.classify()
    }
    fn floor(self) -> Self {
        let hi = self.hi.floor();
        if hi == self.hi {
            Self::from_pair(fast_two_sum(hi, self.lo.floor()))
        } else {
            Self::from_f64(hi)
        }
    }
    fn ceil(self) -> Self {
        let hi = self.hi.ceil();
        if hi == self.hi {
            Self::from_pair(fast_two_sum(hi, self.lo.ceil()))
        } else {
            Self::from_f64(hi)
        }
    }
    fn round(self) -> Self {
        let half = Self::from_f64(0.5);
        if self.hi >= 0.0 {
            (self + half).floor()
        } else {
            (self - half).ceil()
        }
    }
    fn trunc(self) -> Self {
        if self.hi >= 0.0 {
            self.floor()
        } else {
            self.ceil()
        }
    }
    fn fract(self) -> Self {
        self - self.trunc()
    }
    fn abs(self) -> Self {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }
    fn signum(self) -> Self {
        Self::from_f64(self.hi.signum())
    }
    fn is_sign_positive(self) -> bool {
        self.hi.is_sign_positive()
    }
    fn is_sign_negative(self) -> bool {
        self.hi.is_sign_negative()
    }
    fn mul_add(self, a: Self, b: Self) -> Self {
        self * a + b
    }
    fn recip(self) -> Self {
        Self::one() / self
    }
    fn powi(self, n: i32) -> Self {
        let mut base = self;
        let mut e = n.unsigned_abs();
        let mut acc = Self::one();
        while e > 0 {
            if e & 1 == 1 {
                acc = acc * base;
            }
            base = base.square();
            e >>= 1;
        }
        if n < 0 {
            acc.recip()
        } else {
            acc
        }
    }
    fn powf(self, n: Self) -> Self {
        (n * self.ln()).exp()
    }
    fn sqrt(self) -> Self {
        if self.hi <= 0.0 || !self.hi.is_finite() {
            return Self::from_f64(self.hi.sqrt());
        }
        let x = 1.0 / self.hi.sqrt();
        let ax = self.hi * x;
        let residual = (self - Self::from_f64(ax).square()).hi;
        Self::from_pair(two_sum(ax, residual * (x * 0.5)))
    }
    fn exp(self) -> Self {
        if self.hi > 709.7 {
            return Self::infinity();
        }
        if self.hi < -745.0 {
            return Self::zero();
        }
        let m = (self.hi / LN2.hi).round();
        // exp(x) = 2^m * (1 + s)^512 with s = expm1((x - m ln2) / 512).
        let r = (self - LN2.mul_f64(m)).scale_pow2(1.0 / 512.0);
        let mut s = Self::expm1_series(r);
        for _ in 0..9 {
            s = s.scale_pow2(2.0) + s.square();
        }
        let e = s + Self::one();
        let m = m as i32;
        // Split the power of two so neither factor overflows.
        let half = m / 2;
        e.scale_pow2(2f64.powi(half)).scale_pow2(2f64.powi(m - half))
    }
    fn exp2(self) -> Self {
        (self * LN2).exp()
    }
    fn ln(self) -> Self {
        if self.hi <= 0.0 || !self.hi.is_finite() {
            return Self::from_f64(self.hi.ln());
        }
        // Newton step on exp(y) = x from the f64 estimate.
        let y = Self::from_f64(self.hi.ln());
        y + self * (-y).exp() - Self::one()
    }
    fn log(self, base: Self) -> Self {
        self.ln() / base.ln()
    }
    fn log2(self) -> Self {
        self.ln() / LN2
    }
    fn log10(self) -> Self {
        self.ln() / LN10
    }
    fn max(self, other: Self) -> Self {
        if self.is_nan() || other > self {
            other
        } else {
            self
        }
    }
    fn min(self, other: Self) -> Self {
        if self.is_nan() || other < self {
            other
        } else {
            self
        }
    }
    fn abs_sub(self, other: Self) -> Self {
        if self > other {
            self - other
        } else {
            Self::zero()
        }
    }
    fn cbrt(self) -> Self {
        if self.hi == 0.0 || !self.hi.is_finite() {
            return Self::from_f64(self.hi.cbrt());
        }
        // Newton step on y^3 = x.
        let y = Self::from_f64(self.hi.cbrt());
        y - (y.powi(3) - self) / (y.square() * Self::from_f64(3.0))
    }
    fn hypot(self, other: Self) -> Self {
        (self.square() + other.square()).sqrt()
    }
    fn sin(self) -> Self {
        Self::sin_series(self.reduce_two_pi())
    }
    fn cos(self) -> Self {
        let r = self.reduce_two_pi();
        let half_pi = PI.scale_pow2(0.5);
        if r.hi >= 0.0 {
            Self::sin_series(half_pi - r)
        } else {
            Self::sin_series(half_pi + r)
        }
    }
    fn tan(self) -> Self {
        self.sin() / self.cos()
    }
    fn asin(self) -> Self {
        self.atan2((Self::one() - self.square()).sqrt())
    }
    fn acos(self) -> Self {
        (Self::one() - self.square()).sqrt().atan2(self)
    }
    fn atan(self) -> Self {
        self.atan2(Self::one())
    }
    fn atan2(self, other: Self) -> Self {
        if self.hi == 0.0 && other.hi == 0.0 {
            return Self::from_f64(self.hi.atan2(other.hi));
        }
        // Newton step on (cos z, sin z) = (x, y) / r from the f64 estimate.
        let z = Self::from_f64(self.hi.atan2(other.hi));
        let r = self.hypot(other);
        let (x, y) = (other / r, self / r);
        let (s, c) = (z.sin(), z.cos());
        if x.hi.abs() > y.hi.abs() {
            z + (y - s) / c
        } else {
            z - (x - c) / s
        }
    }
    fn sin_cos(self) -> (Self, Self) {
        (self.sin(), self.cos())
    }
    fn exp_m1(self) -> Self {
        if self.hi.abs() <= 1.0 {
            Self::expm1_series(self)
        } else {
            self.exp() - Self::one()
        }
    }
    fn ln_1p(self) -> Self {
        if self.hi.abs() < 0.5 {
            // Newton step on expm1(y) = x.
            let y = Self::from_f64(self.hi.ln_1p());
            y - (y.exp_m1() - self) / y.exp()
        } else {
            (Self::one() + self).ln()
        }
    }
    fn sinh(self) -> Self {
        if self.hi.abs() <= 1.0 {
            let e = Self::expm1_series(self);
            // (e - (-e / (1 + e))) / 2
            (e + e / (e + Self::one())).scale_pow2(0.5)
        } else {
            let e = self.exp();
            (e - e.recip()).scale_pow2(0.5)
        }
    }
    fn cosh(self) -> Self {
        let e = self.exp();
        (e + e.recip()).scale_pow2(0.5)
    }
    fn tanh(self) -> Self {
        if self.hi.abs() > 40.0 {
            return Self::from_f64(self.hi.signum());
        }
        if self.hi.abs() <= 0.5 {
            let e = Self::expm1_series(self.scale_pow2(2.0));
            e / (e + Self::from_f64(2.0))
        } else {
            let e = self.scale_pow2(2.0).exp();
            (e - Self::one()) / (e + Self::one())
        }
    }
    fn asinh(self) -> Self {
        let a = self.abs();
        let r = (a + (a.square() + Self::one()).sqrt()).ln();
        if self.hi < 0.0 {
            -r
        } else {
            r
        }
    }
    fn acosh(self) -> Self {
        (self + (self.square() - Self::one()).sqrt()).ln()
    }
    fn atanh(self) -> Self {
        ((Self::one() + self) / (Self::one() - self)).ln().scale_pow2(0.5)
    }
    fn integer_decode(self) -> (u64, i16, i8) {
        self.hi.integer_decode()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dd(v: f64) -> DoubleDouble {
        DoubleDouble::from_f64(v)
    }

    fn close(a: DoubleDouble, b: DoubleDouble, tol: f64) -> bool {
        ((a - b).hi / b.hi).abs() <= tol
    }

    #[test]
    fn division_recovers_a_third() {
        let third = dd(1.0) / dd(3.0);
        assert!(((third * dd(3.0)) - dd(1.0)).hi.abs() < 1e-31);
        assert!(third.lo != 0.0);
    }

    #[test]
    fn exp_and_ln_are_inverse() {
        for x in [-30.0, -1.5, -1e-3, 0.3, 1.0, 2.5, 50.0] {
            let v = dd(x);
            assert!(close(v.exp().ln(), v, 1e-30), "{x}");
        }
    }

    #[test]
    fn constants_match_functions() {
        assert!(close(dd(2.0).ln(), LN2, 1e-31));
        assert!(close(dd(10.0).ln(), LN10, 1e-31));
        assert!(close(dd(1.0).atan().scale_pow2(4.0), PI, 1e-30));
        assert!(close(
            dd(1.0).exp(),
            DoubleDouble::new(consts::E, 1.4456468917292502e-16),
            1e-31
        ));
    }

    #[test]
    fn sqrt_squares_back() {
        for x in [2.0, 0.3, 1e-8, 12345.678] {
            let r = dd(x).sqrt();
            assert!(close(r * r, dd(x), 1e-31), "{x}");
        }
    }

    #[test]
    fn tanh_matches_exp_form_and_is_odd() {
        for x in [0.1, 0.49, 0.51, 3.0] {
            let v = dd(x);
            let e = v.scale_pow2(2.0).exp();
            assert!(close(v.tanh(), (e - dd(1.0)) / (e + dd(1.0)), 1e-30), "{x}");
            assert!(close(v.tanh(), -(-v).tanh(), 1e-30));
        }
    }

    #[test]
    fn difference_quotient_resolves_tiny_steps() {
        // d/dx exp(x) at 0.3 with h = 1e-12 is exp(0.3) to ~h^2.
        let (x, h) = (dd(0.3), dd(1e-12));
        let d = ((x + h).exp() - (x - h).exp()) / (h + h);
        assert!(close(d, x.exp(), 1e-20));
        let r = ((x + h).recip() - (x - h).recip()) / (h + h);
        assert!(close(r, -(x * x).recip(), 1e-20));
    }

    #[test]
    fn trig_identity_holds() {
        for x in [0.1, 1.0, 2.9, -4.0, 10.0] {
            let (s, c) = dd(x).sin_cos();
            assert!(((s * s + c * c) - dd(1.0)).hi.abs() < 1e-30, "{x}");
            assert!((s.hi - x.sin()).abs() < 1e-15);
        }
    }

    #[test]
    fn ordering_uses_low_word() {
        let a = DoubleDouble::new(1.0, 1e-20);
        assert!(a > dd(1.0));
        assert_eq!(a.max(dd(1.0)), a);
        assert_eq!(dd(2.5).floor(), dd(2.0));
        assert_eq!(dd(-2.5).trunc(), dd(-2.0));
        assert_eq!(dd(3.0).powi(-2), dd(1.0) / dd(9.0));
    }
}
