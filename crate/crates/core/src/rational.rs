//! Exact rational arithmetic helpers.
//!
//! All quantifier bounds, atom shifts, witnesses, and certificate payloads
//! are exact rationals; binary floating point appears only inside the
//! interval engine. This module provides the conversions between the two
//! worlds: parsing decimal literals exactly, and directed (outward)
//! lowering of rationals to `f64`.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::str::FromStr;

/// Exact rational number used throughout the crate.
pub type Rat = BigRational;

/// Builds a rational from an integer pair. Panics if `den == 0`.
pub fn rat(num: i64, den: i64) -> Rat {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// Builds a rational from an integer.
pub fn rat_int(n: i64) -> Rat {
    BigRational::from_integer(BigInt::from(n))
}

/// Parses a numeric literal exactly.
///
/// Accepted forms: `42`, `-7`, `3/4`, `-3/4`, `2.5`, `-0.125`, `1e-3`,
/// `2.5e2`. Decimal and exponent forms are converted exactly (`0.1`
/// becomes `1/10`, never a binary float).
pub fn parse_rat(text: &str) -> Result<Rat, String> {
    let s = text.trim();
    if s.is_empty() {
        return Err("empty numeric literal".to_string());
    }
    if let Some((n, d)) = s.split_once('/') {
        let num = BigInt::from_str(n.trim()).map_err(|e| format!("bad numerator {n:?}: {e}"))?;
        let den = BigInt::from_str(d.trim()).map_err(|e| format!("bad denominator {d:?}: {e}"))?;
        if den.is_zero() {
            return Err(format!("zero denominator in {s:?}"));
        }
        return Ok(BigRational::new(num, den));
    }
    // Split off an exponent part if present.
    let (mantissa, exp) = match s.find(['e', 'E']) {
        Some(i) => {
            let (m, e) = s.split_at(i);
            let exp: i64 = e[1..]
                .parse()
                .map_err(|_| format!("bad exponent in {s:?}"))?;
            (m, exp)
        }
        None => (s, 0),
    };
    let (int_part, frac_part) = match mantissa.split_once('.') {
        Some((i, f)) => (i, f),
        None => (mantissa, ""),
    };
    if frac_part.chars().any(|c| !c.is_ascii_digit()) {
        return Err(format!("bad fractional part in {s:?}"));
    }
    let (negative, int_digits) = match int_part.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, int_part.strip_prefix('+').unwrap_or(int_part)),
    };
    if int_digits.chars().any(|c| !c.is_ascii_digit()) || (int_digits.is_empty() && frac_part.is_empty()) {
        return Err(format!("bad numeric literal {s:?}"));
    }
    let mut digits = String::with_capacity(int_digits.len() + frac_part.len());
    digits.push_str(int_digits);
    digits.push_str(frac_part);
    if digits.is_empty() {
        return Err(format!("bad numeric literal {s:?}"));
    }
    let unsigned = BigInt::from_str(&digits).map_err(|e| format!("bad literal {s:?}: {e}"))?;
    let signed = if negative { -unsigned } else { unsigned };
    let shift = frac_part.len() as i64;
    let scale = exp - shift;
    let ten = BigInt::from(10);
    let rational = if scale >= 0 {
        BigRational::from_integer(signed * ten.pow(scale as u32))
    } else {
        BigRational::new(signed, ten.pow((-scale) as u32))
    };
    Ok(rational)
}

/// Canonical text form: integers print bare, everything else as `num/den`.
pub fn display_rat(r: &Rat) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Converts an `f64` to the exact rational it denotes.
/// Pre: `f` is finite. Every finite binary float is a dyadic rational.
pub fn rat_from_f64(f: f64) -> Rat {
    BigRational::from_float(f).expect("finite float")
}

/// Returns true when `f` (finite) represents `r` exactly.
pub fn f64_is_exact(r: &Rat, f: f64) -> bool {
    f.is_finite() && &rat_from_f64(f) == r
}

/// Largest `f64` that is `<= r` (directed conversion for lower bounds).
pub fn rat_to_f64_floor(r: &Rat) -> f64 {
    let approx = r.to_f64().unwrap_or(f64::NAN);
    if approx.is_nan() {
        // Magnitude overflowed the conversion; saturate by sign.
        return if r.is_negative() { f64::NEG_INFINITY } else { f64::MAX };
    }
    if approx.is_infinite() {
        return if approx > 0.0 { f64::MAX } else { f64::NEG_INFINITY };
    }
    if f64_is_exact(r, approx) {
        approx
    } else if rat_from_f64(approx) <= *r {
        approx
    } else {
        approx.next_down()
    }
}

/// Smallest `f64` that is `>= r` (directed conversion for upper bounds).
pub fn rat_to_f64_ceil(r: &Rat) -> f64 {
    let approx = r.to_f64().unwrap_or(f64::NAN);
    if approx.is_nan() {
        return if r.is_negative() { f64::MIN } else { f64::INFINITY };
    }
    if approx.is_infinite() {
        return if approx > 0.0 { f64::INFINITY } else { f64::MIN };
    }
    if f64_is_exact(r, approx) {
        approx
    } else if rat_from_f64(approx) >= *r {
        approx
    } else {
        approx.next_up()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_integers_and_fractions() {
        assert_eq!(parse_rat("42").unwrap(), rat_int(42));
        assert_eq!(parse_rat("-7").unwrap(), rat_int(-7));
        assert_eq!(parse_rat("3/4").unwrap(), rat(3, 4));
        assert_eq!(parse_rat("-3/4").unwrap(), rat(-3, 4));
    }

    #[test]
    fn parses_decimals_exactly() {
        assert_eq!(parse_rat("0.25").unwrap(), rat(1, 4));
        assert_eq!(parse_rat("2.5").unwrap(), rat(5, 2));
        assert_eq!(parse_rat("-0.125").unwrap(), rat(-1, 8));
        assert_eq!(parse_rat("0.1").unwrap(), rat(1, 10));
        assert_eq!(parse_rat("1e-3").unwrap(), rat(1, 1000));
        assert_eq!(parse_rat("2.5e2").unwrap(), rat_int(250));
        assert_eq!(parse_rat(".5").unwrap(), rat(1, 2));
    }

    #[test]
    fn rejects_malformed_literals() {
        for bad in ["", "1/0", "x", "1.2.3", "1e", "--3"] {
            assert!(parse_rat(bad).is_err(), "{bad:?} should fail");
        }
    }

    #[test]
    fn directed_conversion_brackets_the_rational() {
        for (n, d) in [(1i64, 3i64), (-1, 3), (2, 7), (-22, 7), (1, 10), (355, 113)] {
            let r = rat(n, d);
            let lo = rat_to_f64_floor(&r);
            let hi = rat_to_f64_ceil(&r);
            assert!(rat_from_f64(lo) <= r, "floor of {n}/{d}");
            assert!(rat_from_f64(hi) >= r, "ceil of {n}/{d}");
            assert!(hi == lo || hi == lo.next_up(), "bracket width of {n}/{d}");
        }
    }

    #[test]
    fn exact_dyadics_convert_without_slack() {
        for (n, d) in [(1i64, 2i64), (3, 8), (-5, 4), (7, 1), (0, 1)] {
            let r = rat(n, d);
            assert_eq!(rat_to_f64_floor(&r), rat_to_f64_ceil(&r));
        }
    }

    #[test]
    fn displays_canonically() {
        assert_eq!(display_rat(&rat_int(5)), "5");
        assert_eq!(display_rat(&rat(1, 4)), "1/4");
        assert_eq!(display_rat(&rat(-3, 7)), "-3/7");
    }
}
