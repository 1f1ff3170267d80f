//! Scalar abstraction shared by every mechanism.
//!
//! Two implementations exist: `f64` for fast approximate runs and
//! [`BigRational`] for exact runs. Exact mode uses a zero tolerance
//! everywhere, so breakpoints, tight sets and feasibility checks are
//! decided by true comparisons rather than epsilons.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde_json::Value;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::{Error, Result};

pub trait Scalar:
    Clone
    + fmt::Debug
    + fmt::Display
    + PartialEq
    + PartialOrd
    + Zero
    + One
    + Neg<Output = Self>
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Send
    + Sync
    + 'static
{
    /// True when arithmetic is exact and comparisons need no tolerance.
    const EXACT: bool;

    fn from_int(v: i64) -> Self;
    fn ratio(num: i64, den: i64) -> Self;
    fn from_rational(r: &BigRational) -> Self;
    /// Lossless conversion from a finite float.
    fn from_f64(v: f64) -> Self;
    fn to_f64(&self) -> f64;
    /// Default comparison tolerance: zero in exact mode, `1e-9` for floats.
    fn tol() -> Self;
    fn abs_val(&self) -> Self;
    fn is_finite_val(&self) -> bool;
    fn to_json(&self) -> Value;
    fn from_json(v: &Value) -> Result<Self>;

    fn min_val(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }

    fn max_val(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }
}

impl Scalar for f64 {
    const EXACT: bool = false;

    fn from_int(v: i64) -> Self {
        v as f64
    }

    fn ratio(num: i64, den: i64) -> Self {
        num as f64 / den as f64
    }

    fn from_rational(r: &BigRational) -> Self {
        ToPrimitive::to_f64(r).unwrap_or(f64::NAN)
    }

    fn from_f64(v: f64) -> Self {
        v
    }

    fn to_f64(&self) -> f64 {
        *self
    }

    fn tol() -> Self {
        1e-9
    }

    fn abs_val(&self) -> Self {
        self.abs()
    }

    fn is_finite_val(&self) -> bool {
        self.is_finite()
    }

    fn to_json(&self) -> Value {
        serde_json::Number::from_f64(*self)
            .map(Value::Number)
            .unwrap_or(Value::Null)
    }

    fn from_json(v: &Value) -> Result<Self> {
        match v {
            Value::Number(n) => n
                .as_f64()
                .ok_or_else(|| Error::Parse(format!("not a float: {n}"))),
            Value::String(s) => Ok(ToPrimitive::to_f64(&parse_rational(s)?).unwrap_or(f64::NAN)),
            other => Err(Error::Parse(format!("expected number, got {other}"))),
        }
    }
}

impl Scalar for BigRational {
    const EXACT: bool = true;

    fn from_int(v: i64) -> Self {
        BigRational::from_integer(BigInt::from(v))
    }

    fn ratio(num: i64, den: i64) -> Self {
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }

    fn from_rational(r: &BigRational) -> Self {
        r.clone()
    }

    fn from_f64(v: f64) -> Self {
        BigRational::from_float(v).unwrap_or_else(BigRational::zero)
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }

    fn tol() -> Self {
        BigRational::zero()
    }

    fn abs_val(&self) -> Self {
        Signed::abs(self)
    }

    fn is_finite_val(&self) -> bool {
        true
    }

    fn to_json(&self) -> Value {
        Value::String(rational_to_string(self))
    }

    fn from_json(v: &Value) -> Result<Self> {
        match v {
            // With `arbitrary_precision` the displayed form is the literal
            // from the source text, so decimals parse exactly.
            Value::Number(n) => parse_rational(&n.to_string()),
            Value::String(s) => parse_rational(s),
            other => Err(Error::Parse(format!("expected number, got {other}"))),
        }
    }
}

/// Parses a decimal literal (`-12`, `3.25`, `1e-4`, `.5`) or a fraction
/// (`2/3`) into an exact rational.
pub fn parse_rational(text: &str) -> Result<BigRational> {
    let s = text.trim();
    if s.is_empty() {
        return Err(Error::Parse("empty number".into()));
    }
    if let Some((num, den)) = s.split_once('/') {
        let num: BigInt = num
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad numerator in {s:?}")))?;
        let den: BigInt = den
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad denominator in {s:?}")))?;
        if den.is_zero() {
            return Err(Error::Parse(format!("zero denominator in {s:?}")));
        }
        return Ok(BigRational::new(num, den));
    }

    let (mantissa, exp) = match s.split_once(['e', 'E']) {
        Some((m, e)) => {
            let exp: i64 = e
                .parse()
                .map_err(|_| Error::Parse(format!("bad exponent in {s:?}")))?;
            (m, exp)
        }
        None => (s, 0),
    };

    let (sign, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (-1, rest),
        None => (1, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = match digits.split_once('.') {
        Some((i, f)) => (i, f),
        None => (digits, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(Error::Parse(format!("no digits in {s:?}")));
    }
    if !int_part.chars().all(|c| c.is_ascii_digit()) || !frac_part.chars().all(|c| c.is_ascii_digit())
    {
        return Err(Error::Parse(format!("bad decimal literal {s:?}")));
    }

    let joined = format!("{int_part}{frac_part}");
    let mut value: BigInt = if joined.is_empty() {
        BigInt::zero()
    } else {
        joined
            .parse()
            .map_err(|_| Error::Parse(format!("bad digits in {s:?}")))?
    };
    if sign < 0 {
        value = -value;
    }

    let scale = exp - frac_part.len() as i64;
    let ten = BigInt::from(10);
    let mut result = BigRational::from_integer(value);
    if scale > 0 {
        result *= BigRational::from_integer(num_traits::pow(ten, scale as usize));
    } else if scale < 0 {
        result /= BigRational::from_integer(num_traits::pow(ten, (-scale) as usize));
    }
    Ok(result)
}

/// Renders a rational as an exact decimal when the denominator is of the
/// form `2^a 5^b`, falling back to `num/den` otherwise.
pub fn rational_to_string(r: &BigRational) -> String {
    let two = BigInt::from(2);
    let five = BigInt::from(5);
    let mut den = r.denom().clone();
    let mut twos = 0usize;
    let mut fives = 0usize;
    while (&den % &two).is_zero() {
        den /= &two;
        twos += 1;
    }
    while (&den % &five).is_zero() {
        den /= &five;
        fives += 1;
    }
    if !den.is_one() {
        return format!("{}/{}", r.numer(), r.denom());
    }
    let k = twos.max(fives);
    // numer / (2^twos 5^fives) == numer * 2^(k-twos) 5^(k-fives) / 10^k
    let mut scaled = r.numer().clone();
    scaled *= num_traits::pow(two, k - twos);
    scaled *= num_traits::pow(five, k - fives);
    let negative = scaled.is_negative();
    let digits = scaled.abs_val().to_string();
    let mut out = String::new();
    if negative {
        out.push('-');
    }
    if k == 0 {
        out.push_str(&digits);
        return out;
    }
    if digits.len() > k {
        let (int_part, frac_part) = digits.split_at(digits.len() - k);
        out.push_str(int_part);
        out.push('.');
        out.push_str(frac_part);
    } else {
        out.push_str("0.");
        for _ in 0..(k - digits.len()) {
            out.push('0');
        }
        out.push_str(&digits);
    }
    // Trim trailing zeros but keep at least one fractional digit.
    while out.ends_with('0') && !out.ends_with(".0") {
        out.pop();
    }
    out
}

trait AbsHelper {
    fn abs_val(&self) -> Self;
}

impl AbsHelper for BigInt {
    fn abs_val(&self) -> Self {
        Signed::abs(self)
    }
}

/// Sums an iterator of scalars; `Sum` is not part of the trait bounds.
pub fn sum<S: Scalar>(iter: impl IntoIterator<Item = S>) -> S {
    iter.into_iter().fold(S::zero(), |acc, v| acc + v)
}

/// Dot product of two slices.
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    sum(a.iter().zip(b).map(|(x, y)| x.clone() * y.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_decimals_exactly() {
        assert_eq!(parse_rational("0.1").unwrap(), BigRational::ratio(1, 10));
        assert_eq!(parse_rational("-3.25").unwrap(), BigRational::ratio(-13, 4));
        assert_eq!(parse_rational("1e-4").unwrap(), BigRational::ratio(1, 10_000));
        assert_eq!(parse_rational("2.5e2").unwrap(), BigRational::from_int(250));
        assert_eq!(parse_rational(".5").unwrap(), BigRational::ratio(1, 2));
        assert_eq!(parse_rational("2/3").unwrap(), BigRational::ratio(2, 3));
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("abc").is_err());
    }

    #[test]
    fn renders_decimals_exactly() {
        assert_eq!(rational_to_string(&BigRational::ratio(1, 2)), "0.5");
        assert_eq!(rational_to_string(&BigRational::ratio(-13, 4)), "-3.25");
        assert_eq!(rational_to_string(&BigRational::from_int(42)), "42");
        assert_eq!(rational_to_string(&BigRational::ratio(1, 3)), "1/3");
        assert_eq!(rational_to_string(&BigRational::ratio(1, 10_000)), "0.0001");
    }

    #[test]
    fn round_trips_through_json() {
        let vals = ["0.1", "1/3", "-7", "12.0625"];
        for v in vals {
            let r = parse_rational(v).unwrap();
            let json = r.to_json();
            let back = BigRational::from_json(&json).unwrap();
            assert_eq!(r, back);
        }
    }
}
