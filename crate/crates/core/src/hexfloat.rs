//! C99-style hexadecimal float formatting with bit-exact round trips.
//!
//! Serialized bases and fit coefficients must survive export/import without
//! any rounding, which decimal shortest-representation printing does not
//! guarantee across parsers. `%a`-style strings ("0x1.8p+1") are unambiguous.

use crate::error::Error;

/// Formats a finite f64 as a hex-float literal, e.g. `-0x1.921fb54442d18p+1`.
/// Trailing zero digits of the mantissa are trimmed.
pub fn to_hex(x: f64) -> String {
    assert!(x.is_finite(), "hex-float format requires finite input");
    let bits = x.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp_bits = ((bits >> 52) & 0x7ff) as i64;
    let mant = bits & ((1u64 << 52) - 1);
    if exp_bits == 0 && mant == 0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, exp) = if exp_bits == 0 {
        ('0', -1022i64)
    } else {
        ('1', exp_bits - 1023)
    };
    let mut digits = format!("{mant:013x}");
    while digits.ends_with('0') {
        digits.pop();
    }
    if digits.is_empty() {
        format!("{sign}0x{lead}p{exp:+}")
    } else {
        format!("{sign}0x{lead}.{digits}p{exp:+}")
    }
}

/// Parses the output of [`to_hex`] (and ordinary C99 hex-float literals with
/// up to 26 fraction digits) back to an identical f64.
pub fn parse_hex(s: &str) -> Result<f64, Error> {
    let bad = || Error::InvalidParameter(format!("malformed hex-float literal {s:?}"));
    let mut rest = s.trim();
    let mut sign = 1.0f64;
    if let Some(r) = rest.strip_prefix('-') {
        sign = -1.0;
        rest = r;
    } else if let Some(r) = rest.strip_prefix('+') {
        rest = r;
    }
    rest = rest
        .strip_prefix("0x")
        .or_else(|| rest.strip_prefix("0X"))
        .ok_or_else(bad)?;
    let p = rest.find(['p', 'P']).ok_or_else(bad)?;
    let (mant_str, exp_str) = (&rest[..p], &rest[p + 1..]);
    let exp: i32 = exp_str.parse().map_err(|_| bad())?;
    let (int_str, frac_str) = match mant_str.find('.') {
        Some(d) => (&mant_str[..d], &mant_str[d + 1..]),
        None => (mant_str, ""),
    };
    if int_str.is_empty() && frac_str.is_empty() {
        return Err(bad());
    }
    if frac_str.len() > 26 {
        return Err(bad());
    }
    let mut mant: u128 = 0;
    for c in int_str.chars().chain(frac_str.chars()) {
        let d = c.to_digit(16).ok_or_else(bad)? as u128;
        mant = mant.checked_mul(16).and_then(|m| m.checked_add(d)).ok_or_else(bad)?;
    }
    // value = mant * 2^(exp - 4*frac_len); scale in two steps so the
    // intermediate power of two never overflows/underflows prematurely.
    let shift = exp - 4 * frac_str.len() as i32;
    let mut v = mant as f64;
    let (s1, s2) = (shift / 2, shift - shift / 2);
    v *= (2.0f64).powi(s1);
    v *= (2.0f64).powi(s2);
    Ok(sign * v)
}
