//! Scalar abstraction over the two arithmetic modes.
//!
//! Every solver and verifier in this crate is generic over [`Scalar`]. The
//! two implementations are exact big rationals ([`Rat`]), in which all the
//! structural identities (martingale property, flat-off products, dynamics)
//! hold with zero tolerance, and `f64` for larger sweeps where a tolerance
//! is configured by the caller.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::fmt::{Debug, Display};
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

/// Exact rational scalar.
pub type Rat = BigRational;

/// Arithmetic interface shared by exact rationals and floating point.
pub trait Scalar:
    Clone
    + PartialEq
    + PartialOrd
    + Debug
    + Display
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + Zero
    + One
    + Signed
    + Send
    + Sync
    + 'static
{
    /// True when arithmetic is exact (identities assertable at tolerance 0).
    const EXACT: bool;

    fn from_int(n: i64) -> Self;

    /// Exact ratio `num/den`; panics on `den == 0`.
    fn ratio(num: i64, den: i64) -> Self;

    fn to_f64(&self) -> f64;

    /// Interval width below which bisection stops for drivers without a
    /// closed-form implicit step.
    fn bisection_width() -> Self;

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

    /// Positive part `x⁺`.
    fn pos_part(self) -> Self {
        if self.is_negative() {
            Self::zero()
        } else {
            self
        }
    }

    /// Clamp into `[lo, hi]` (callers guarantee `lo <= hi`).
    fn median(lo: Self, mid: Self, hi: Self) -> Self {
        Self::min_of(Self::max_of(lo, mid), hi)
    }
}

impl Scalar for Rat {
    const EXACT: bool = true;

    fn from_int(n: i64) -> Self {
        BigRational::from_integer(BigInt::from(n))
    }

    fn ratio(num: i64, den: i64) -> Self {
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }

    fn bisection_width() -> Self {
        // 2^-64: far below any tolerance used in float comparisons, while
        // keeping denominators bounded during bisection.
        BigRational::new(BigInt::one(), BigInt::from(2u8).pow(64))
    }
}

impl Scalar for f64 {
    const EXACT: bool = false;

    fn from_int(n: i64) -> Self {
        n as f64
    }

    fn ratio(num: i64, den: i64) -> Self {
        assert!(den != 0, "zero denominator");
        num as f64 / den as f64
    }

    fn to_f64(&self) -> f64 {
        *self
    }

    fn bisection_width() -> Self {
        1e-14
    }
}

/// Parses a scalar literal: an integer, a decimal, or a ratio `a/b`.
pub fn parse_rat(text: &str) -> Option<Rat> {
    let s = text.trim();
    if let Some((num, den)) = s.split_once('/') {
        let n: BigInt = num.trim().parse().ok()?;
        let d: BigInt = den.trim().parse().ok()?;
        if d.is_zero() {
            return None;
        }
        return Some(BigRational::new(n, d));
    }
    if let Some((int, frac)) = s.split_once('.') {
        let sign = if int.trim_start().starts_with('-') { -1 } else { 1 };
        let i: BigInt = if int.is_empty() || int == "-" {
            BigInt::zero()
        } else {
            int.parse().ok()?
        };
        if frac.is_empty() || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        let f: BigInt = frac.parse().ok()?;
        let scale = BigInt::from(10u8).pow(frac.len() as u32);
        let abs = i.abs() * &scale + f;
        return Some(BigRational::new(abs * BigInt::from(sign), scale));
    }
    let n: BigInt = s.parse().ok()?;
    Some(BigRational::from_integer(n))
}

/// Canonical text form of a rational: `n` or `n/d`.
pub fn format_rat(x: &Rat) -> String {
    if x.denom().is_one() {
        x.numer().to_string()
    } else {
        format!("{}/{}", x.numer(), x.denom())
    }
}

/// Converts an exact rational into the target scalar type.
pub fn rat_to_scalar<S: Scalar>(x: &Rat) -> S {
    if S::EXACT {
        // Round-trip through the ratio constructor is not possible for
        // arbitrary big integers, so rebuild from parts via string only for
        // the f64 case; for the exact case we transmute through Any.
        let any: &dyn std::any::Any = x;
        any.downcast_ref::<S>()
            .cloned()
            .expect("exact scalar is Rat")
    } else {
        let any: &dyn std::any::Any = &Scalar::to_f64(x);
        any.downcast_ref::<S>().cloned().expect("inexact scalar is f64")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_forms() {
        assert_eq!(parse_rat("3").unwrap(), Rat::from_int(3));
        assert_eq!(parse_rat("-7/2").unwrap(), Rat::ratio(-7, 2));
        assert_eq!(parse_rat("0.25").unwrap(), Rat::ratio(1, 4));
        assert_eq!(parse_rat("-1.5").unwrap(), Rat::ratio(-3, 2));
        assert!(parse_rat("1/0").is_none());
        assert!(parse_rat("abc").is_none());
    }

    #[test]
    fn format_round_trip() {
        for s in ["5", "-3/4", "22/7"] {
            let r = parse_rat(s).unwrap();
            assert_eq!(format_rat(&r), s);
        }
    }

    #[test]
    fn median_orders() {
        assert_eq!(
            Rat::median(Rat::from_int(0), Rat::from_int(5), Rat::from_int(2)),
            Rat::from_int(2)
        );
        assert_eq!(f64::median(0.0, -1.0, 2.0), 0.0);
    }
}
