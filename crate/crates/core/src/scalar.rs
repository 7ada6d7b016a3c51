//! Arithmetic backends and extended reals.
//!
//! Every algorithm in the crate is generic over [`Scalar`]. Two backends are
//! provided: `f64` with absolute tolerances, and [`Rational`] (arbitrary
//! precision) where every comparison is exact.

use std::fmt::{self, Debug, Display};
use std::ops::{Add, Div, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Serialize, Serializer};

/// Exact rational number.
pub type Rational = BigRational;

pub trait Scalar:
    Clone
    + Debug
    + Display
    + PartialEq
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// Name used in reports (`"f64"` or `"rational"`).
    const NAME: &'static str;

    fn zero() -> Self;
    fn one() -> Self;
    fn from_i64(v: i64) -> Self;
    fn ratio(num: i64, den: i64) -> Self {
        Self::from_i64(num) / Self::from_i64(den)
    }
    /// Converts a finite float. The rational backend reads the shortest
    /// decimal representation, so `0.1` becomes exactly `1/10`.
    fn from_f64(v: f64) -> Option<Self>;
    /// Nearest value to an exact rational.
    fn from_rational(r: &Rational) -> Self;
    /// Reads a decimal (`"0.25"`, `"1e-3"`) or a fraction (`"2/7"`).
    fn parse(text: &str) -> Option<Self> {
        parse_decimal(text).map(|r| Self::from_rational(&r))
    }
    fn to_f64(&self) -> f64;
    /// Exact value as a rational; `None` for non-finite floats.
    fn to_rational(&self) -> Option<Rational>;
    fn abs(&self) -> Self;
    /// Whether comparisons are exact.
    fn is_exact() -> bool;
    /// Feasibility tolerance (zero for exact arithmetic).
    fn tolerance() -> Self;
    /// Entries at or below this magnitude are treated as zero when pivoting.
    fn pivot_tolerance() -> Self;

    fn is_zero_tol(&self) -> bool {
        self.abs() <= Self::tolerance()
    }
    fn is_pos_tol(&self) -> bool {
        *self > Self::tolerance()
    }
    fn is_neg_tol(&self) -> bool {
        *self < -Self::tolerance()
    }
    fn approx_eq(&self, other: &Self) -> bool {
        (self.clone() - other.clone()).is_zero_tol()
    }
    fn is_exact_zero(&self) -> bool {
        *self == Self::zero()
    }
    fn max_of(a: Self, b: Self) -> Self {
        if a >= b {
            a
        } else {
            b
        }
    }
    fn min_of(a: Self, b: Self) -> Self {
        if a <= b {
            a
        } else {
            b
        }
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_i64(v: i64) -> Self {
        v as f64
    }
    fn from_f64(v: f64) -> Option<Self> {
        v.is_finite().then_some(v)
    }
    fn from_rational(r: &Rational) -> Self {
        ToPrimitive::to_f64(r).unwrap_or(f64::NAN)
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn to_rational(&self) -> Option<Rational> {
        BigRational::from_float(*self)
    }
    fn abs(&self) -> Self {
        f64::abs(*self)
    }
    fn is_exact() -> bool {
        false
    }
    fn tolerance() -> Self {
        1e-9
    }
    fn pivot_tolerance() -> Self {
        1e-9
    }
}

impl Scalar for Rational {
    const NAME: &'static str = "rational";

    fn zero() -> Self {
        Zero::zero()
    }
    fn one() -> Self {
        One::one()
    }
    fn from_i64(v: i64) -> Self {
        BigRational::from_integer(BigInt::from(v))
    }
    fn from_f64(v: f64) -> Option<Self> {
        if !v.is_finite() {
            return None;
        }
        parse_decimal(&format!("{v}"))
    }
    fn from_rational(r: &Rational) -> Self {
        r.clone()
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
    fn to_rational(&self) -> Option<Rational> {
        Some(self.clone())
    }
    fn abs(&self) -> Self {
        Signed::abs(self)
    }
    fn is_exact() -> bool {
        true
    }
    fn tolerance() -> Self {
        Zero::zero()
    }
    fn pivot_tolerance() -> Self {
        Zero::zero()
    }
    fn is_zero_tol(&self) -> bool {
        Zero::is_zero(self)
    }
}

/// Parses `"12.5"`, `"-3"`, `"1e-3"` or `"2/7"` into an exact rational.
pub fn parse_decimal(text: &str) -> Option<Rational> {
    let text = text.trim();
    if let Some((num, den)) = text.split_once('/') {
        let num = parse_decimal(num)?;
        let den = parse_decimal(den)?;
        if Zero::is_zero(&den) {
            return None;
        }
        return Some(num / den);
    }
    let (mantissa, exponent) = match text.find(['e', 'E']) {
        Some(pos) => (&text[..pos], text[pos + 1..].parse::<i32>().ok()?),
        None => (text, 0),
    };
    let (negative, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let all_digits = format!("{int_part}{frac_part}");
    let numer: BigInt = all_digits.parse().ok()?;
    let scale = exponent - frac_part.len() as i32;
    let ten = BigInt::from(10);
    let mut value = BigRational::from_integer(numer);
    if scale >= 0 {
        value *= BigRational::from_integer(num_traits::pow(ten, scale as usize));
    } else {
        value /= BigRational::from_integer(num_traits::pow(ten, (-scale) as usize));
    }
    Some(if negative { -value } else { value })
}

/// Extended real number `R ∪ {−∞, +∞}`.
#[derive(Clone, Debug, PartialEq)]
pub enum Ext<S> {
    NegInf,
    Finite(S),
    PosInf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
#[error("undefined sum (+inf) + (-inf)")]
pub struct UndefinedSum;

impl<S: Scalar> Ext<S> {
    pub fn zero() -> Self {
        Ext::Finite(S::zero())
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, Ext::Finite(_))
    }

    pub fn finite(&self) -> Option<&S> {
        match self {
            Ext::Finite(v) => Some(v),
            _ => None,
        }
    }

    pub fn into_finite(self) -> Option<S> {
        match self {
            Ext::Finite(v) => Some(v),
            _ => None,
        }
    }

    pub fn to_f64(&self) -> f64 {
        match self {
            Ext::NegInf => f64::NEG_INFINITY,
            Ext::Finite(v) => v.to_f64(),
            Ext::PosInf => f64::INFINITY,
        }
    }

    pub fn try_add(&self, other: &Self) -> Result<Self, UndefinedSum> {
        match (self, other) {
            (Ext::Finite(a), Ext::Finite(b)) => Ok(Ext::Finite(a.clone() + b.clone())),
            (Ext::PosInf, Ext::NegInf) | (Ext::NegInf, Ext::PosInf) => Err(UndefinedSum),
            (Ext::PosInf, _) | (_, Ext::PosInf) => Ok(Ext::PosInf),
            _ => Ok(Ext::NegInf),
        }
    }

    pub fn try_sub(&self, other: &Self) -> Result<Self, UndefinedSum> {
        self.try_add(&other.neg())
    }

    pub fn neg(&self) -> Self {
        match self {
            Ext::NegInf => Ext::PosInf,
            Ext::Finite(v) => Ext::Finite(-v.clone()),
            Ext::PosInf => Ext::NegInf,
        }
    }

    /// Multiplication by a nonnegative finite factor; `0 · ±∞ = 0`.
    pub fn scale(&self, factor: &S) -> Self {
        if factor.is_exact_zero() {
            return Ext::zero();
        }
        match self {
            Ext::Finite(v) => Ext::Finite(v.clone() * factor.clone()),
            other => other.clone(),
        }
    }

    /// Equality with tolerance on finite values; infinities must match.
    pub fn approx_eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Ext::Finite(a), Ext::Finite(b)) => a.approx_eq(b),
            (Ext::PosInf, Ext::PosInf) | (Ext::NegInf, Ext::NegInf) => true,
            _ => false,
        }
    }

    /// `self <= other` up to the backend tolerance.
    pub fn le_tol(&self, other: &Self) -> bool {
        match (self, other) {
            (Ext::NegInf, _) | (_, Ext::PosInf) => true,
            (Ext::Finite(a), Ext::Finite(b)) => !(a.clone() - b.clone()).is_pos_tol(),
            _ => false,
        }
    }

    pub fn map<T, F: FnOnce(&S) -> T>(&self, f: F) -> Ext<T> {
        match self {
            Ext::NegInf => Ext::NegInf,
            Ext::Finite(v) => Ext::Finite(f(v)),
            Ext::PosInf => Ext::PosInf,
        }
    }
}

impl<S: Scalar> PartialOrd for Ext<S> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        use std::cmp::Ordering::*;
        match (self, other) {
            (Ext::Finite(a), Ext::Finite(b)) => a.partial_cmp(b),
            (Ext::NegInf, Ext::NegInf) | (Ext::PosInf, Ext::PosInf) => Some(Equal),
            (Ext::NegInf, _) | (_, Ext::PosInf) => Some(Less),
            (Ext::PosInf, _) | (_, Ext::NegInf) => Some(Greater),
        }
    }
}

impl<S: Scalar> Display for Ext<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ext::NegInf => write!(f, "-inf"),
            Ext::Finite(v) => write!(f, "{v}"),
            Ext::PosInf => write!(f, "+inf"),
        }
    }
}

impl<S: Scalar> Serialize for Ext<S> {
    fn serialize<Z: Serializer>(&self, serializer: Z) -> Result<Z::Ok, Z::Error> {
        match self {
            Ext::NegInf => serializer.serialize_str("-inf"),
            Ext::PosInf => serializer.serialize_str("+inf"),
            Ext::Finite(v) => serialize_scalar(v, serializer),
        }
    }
}

/// Floats serialize as JSON numbers; rationals as `"p/q"` strings so that
/// exact reports stay exact.
pub fn serialize_scalar<S: Scalar, Z: Serializer>(v: &S, serializer: Z) -> Result<Z::Ok, Z::Error> {
    if S::is_exact() {
        serializer.serialize_str(&v.to_string())
    } else {
        serializer.serialize_f64(v.to_f64())
    }
}

/// JSON-friendly wrapper used in reports.
#[derive(Clone, Debug, PartialEq)]
pub struct Num<S>(pub S);

impl<S: Scalar> Serialize for Num<S> {
    fn serialize<Z: Serializer>(&self, serializer: Z) -> Result<Z::Ok, Z::Error> {
        serialize_scalar(&self.0, serializer)
    }
}

pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter()
        .zip(b)
        .fold(S::zero(), |acc, (x, y)| acc + x.clone() * y.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimal_parsing_is_exact() {
        assert_eq!(parse_decimal("0.1"), Some(Rational::ratio(1, 10)));
        assert_eq!(parse_decimal("-2.25"), Some(Rational::ratio(-9, 4)));
        assert_eq!(parse_decimal("1e-3"), Some(Rational::ratio(1, 1000)));
        assert_eq!(parse_decimal("3/6"), Some(Rational::ratio(1, 2)));
        assert_eq!(parse_decimal("1/0"), None);
        assert_eq!(parse_decimal("abc"), None);
        assert_eq!(Rational::from_f64(0.6), Some(Rational::ratio(3, 5)));
        assert_eq!(Rational::from_f64(f64::NAN), None);
    }

    #[test]
    fn extended_arithmetic() {
        let a: Ext<f64> = Ext::Finite(1.0);
        assert_eq!(a.try_add(&Ext::PosInf), Ok(Ext::PosInf));
        assert_eq!(Ext::<f64>::NegInf.try_add(&a), Ok(Ext::NegInf));
        assert_eq!(Ext::<f64>::PosInf.try_add(&Ext::NegInf), Err(UndefinedSum));
        assert!(Ext::<f64>::NegInf < a && a < Ext::PosInf);
        assert_eq!(Ext::<f64>::PosInf.scale(&0.0), Ext::Finite(0.0));
        assert!(Ext::Finite(1.0 + 1e-12).le_tol(&a));
    }
}
