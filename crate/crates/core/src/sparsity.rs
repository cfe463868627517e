//! Exact sparsity fractions.
//!
//! Sparsities are kept as rationals so that the memory model and the
//! unpruned-count rounding are exact for decimal inputs like `0.9`.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Parses a decimal literal (`0.9`, `-2`, `1e9`, `2.5E-3`) into an exact
/// rational.
pub fn parse_decimal(s: &str) -> Result<Ratio<i128>> {
    let bad = || Error::Parameter(format!("not a decimal number: {s:?}"));
    let s = s.trim();
    let (mantissa, exp) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], s[i + 1..].parse::<i32>().map_err(|_| bad())?),
        None => (s, 0),
    };
    let (neg, mantissa) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int, frac) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    if int.is_empty() && frac.is_empty() {
        return Err(bad());
    }
    if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) || int.len() + frac.len() > 30 {
        return Err(bad());
    }
    let digits: i128 = format!("{int}{frac}").parse().map_err(|_| bad())?;
    let scale = exp - frac.len() as i32;
    if scale.abs() > 30 {
        return Err(bad());
    }
    let pow = 10i128.pow(scale.unsigned_abs());
    let mut r = if scale >= 0 {
        Ratio::from_integer(digits.checked_mul(pow).ok_or_else(bad)?)
    } else {
        Ratio::new(digits, pow)
    };
    if neg {
        r = -r;
    }
    Ok(r)
}

/// Fraction `p` of parameters that are pruned, `0 <= p <= 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Sparsity(Ratio<i128>);

impl Sparsity {
    pub const ZERO: Sparsity = Sparsity(Ratio::new_raw(0, 1));

    pub fn new(p: Ratio<i128>) -> Result<Self> {
        if p < Ratio::zero() || p > Ratio::from_integer(1) {
            return Err(Error::Parameter(format!("sparsity {p} outside [0, 1]")));
        }
        Ok(Self(p))
    }

    /// Exact rational from the shortest decimal representation of `p`, so
    /// `0.9_f64` becomes `9/10`.
    pub fn from_f64(p: f64) -> Result<Self> {
        if !p.is_finite() {
            return Err(Error::Parameter(format!("sparsity {p} is not finite")));
        }
        Self::new(parse_decimal(&format!("{p}"))?)
    }

    pub fn ratio(self) -> Ratio<i128> {
        self.0
    }

    /// Unpruned fraction `1 - p`.
    pub fn kept(self) -> Ratio<i128> {
        Ratio::from_integer(1) - self.0
    }

    pub fn to_f64(self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    /// `round((1 - p) * n)` with halves rounded up.
    pub fn kept_count(self, n: usize) -> usize {
        let x = self.kept() * Ratio::from_integer(n as i128) + Ratio::new(1, 2);
        x.floor().to_integer() as usize
    }

    /// Whether `(1 - p) * n` is an integer.
    pub fn divides(self, n: usize) -> bool {
        (self.kept() * Ratio::from_integer(n as i128)).is_integer()
    }
}

impl FromStr for Sparsity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::new(parse_decimal(s)?)
    }
}

impl fmt::Display for Sparsity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_ratio(self.0))
    }
}

impl Serialize for Sparsity {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.to_f64())
    }
}

impl<'de> Deserialize<'de> for Sparsity {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        Sparsity::from_f64(v).map_err(serde::de::Error::custom)
    }
}

/// Decimal rendering of a rational: exact when the expansion terminates,
/// otherwise the shortest `f64` representation.
pub fn format_ratio(r: Ratio<i128>) -> String {
    if r.is_integer() {
        return r.to_integer().to_string();
    }
    let mut den = *r.denom();
    let (mut twos, mut fives) = (0u32, 0u32);
    while den % 2 == 0 {
        den /= 2;
        twos += 1;
    }
    while den % 5 == 0 {
        den /= 5;
        fives += 1;
    }
    if den != 1 {
        return format!("{}", r.to_f64().unwrap_or(f64::NAN));
    }
    let digits = twos.max(fives);
    let scaled = r * Ratio::from_integer(10i128.pow(digits));
    let n = scaled.to_integer();
    let sign = if n < 0 { "-" } else { "" };
    let n = n.abs();
    let p = 10i128.pow(digits);
    let frac = format!("{:0width$}", n % p, width = digits as usize);
    format!("{sign}{}.{}", n / p, frac.trim_end_matches('0'))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimal_parsing() {
        assert_eq!(parse_decimal("0.9").unwrap(), Ratio::new(9, 10));
        assert_eq!(
            parse_decimal("1e9").unwrap(),
            Ratio::from_integer(1_000_000_000)
        );
        assert_eq!(parse_decimal("-2.5E-1").unwrap(), Ratio::new(-1, 4));
        assert_eq!(parse_decimal(".5").unwrap(), Ratio::new(1, 2));
        assert!(parse_decimal("abc").is_err());
        assert!(parse_decimal("").is_err());
        assert!(parse_decimal("1.2.3").is_err());
    }

    #[test]
    fn sparsity_bounds() {
        assert!("1.1".parse::<Sparsity>().is_err());
        assert!("-0.1".parse::<Sparsity>().is_err());
        assert_eq!(Sparsity::from_f64(0.9).unwrap().ratio(), Ratio::new(9, 10));
    }

    #[test]
    fn kept_count_rounds_half_up() {
        let half: Sparsity = "0.5".parse().unwrap();
        assert_eq!(half.kept_count(3), 2);
        assert_eq!(half.kept_count(4), 2);
        let p9: Sparsity = "0.9".parse().unwrap();
        assert_eq!(p9.kept_count(100), 10);
        assert_eq!(p9.kept_count(15), 2);
        assert!(p9.divides(100));
        assert!(!p9.divides(15));
    }

    #[test]
    fn ratio_formatting() {
        assert_eq!(format_ratio(Ratio::new(39, 50)), "0.78");
        assert_eq!(format_ratio(Ratio::new(-3, 10)), "-0.3");
        assert_eq!(format_ratio(Ratio::from_integer(2600)), "2600");
        assert_eq!(format_ratio(Ratio::new(1, 8)), "0.125");
        assert_eq!(format_ratio(Ratio::new(1, 3)), format!("{}", 1.0f64 / 3.0));
    }
}
