//! Exact text encoding of `f64` as C99-style hexadecimal floating point
//! (`0x1.8p+1`), used by the model file format.

use std::fmt::Write as _;

const MANTISSA_BITS: u32 = 52;
const MANTISSA_MASK: u64 = (1 << MANTISSA_BITS) - 1;
const EXP_BIAS: i64 = 1023;

/// Formats a finite value. Non-finite values are rendered as `inf`/`nan`
/// and rejected by [`parse`].
pub fn format(value: f64) -> String {
    if value.is_nan() {
        return "nan".to_string();
    }
    if value.is_infinite() {
        return if value > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    let bits = value.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let biased = ((bits >> MANTISSA_BITS) & 0x7ff) as i64;
    let mantissa = bits & MANTISSA_MASK;
    if biased == 0 && mantissa == 0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, exp) = if biased == 0 { (0, -1022) } else { (1, biased - EXP_BIAS) };
    let mut out = format!("{sign}0x{lead}");
    if mantissa != 0 {
        let mut digits = format!("{mantissa:013x}");
        while digits.ends_with('0') {
            digits.pop();
        }
        out.push('.');
        out.push_str(&digits);
    }
    let _ = write!(out, "p{}{}", if exp < 0 { '-' } else { '+' }, exp.abs());
    out
}

/// Parses the canonical forms produced by [`format`] (leading digit 0 or 1,
/// at most 13 fraction digits). Any other spelling is an error.
pub fn parse(text: &str) -> Result<f64, String> {
    let bad = || format!("invalid hex-float literal {text:?}");
    let (negative, rest) = match text.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, text),
    };
    let rest = rest.strip_prefix("0x").ok_or_else(bad)?;
    let (mant, exp) = rest.split_once('p').ok_or_else(bad)?;
    let exp: i64 = exp.parse().map_err(|_| bad())?;
    let (lead, frac) = match mant.split_once('.') {
        Some((l, f)) if !f.is_empty() => (l, f),
        Some(_) => return Err(bad()),
        None => (mant, ""),
    };
    if frac.len() > 13 || !frac.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(bad());
    }
    let mut fraction = if frac.is_empty() { 0 } else { u64::from_str_radix(frac, 16).map_err(|_| bad())? };
    fraction <<= 4 * (13 - frac.len());
    let magnitude = match lead {
        "1" => {
            if !(-1022..=1023).contains(&exp) {
                return Err(bad());
            }
            (((exp + EXP_BIAS) as u64) << MANTISSA_BITS) | fraction
        }
        "0" if fraction == 0 && exp == 0 => 0,
        "0" if exp == -1022 => fraction,
        _ => return Err(bad()),
    };
    let bits = magnitude | if negative { 1 << 63 } else { 0 };
    Ok(f64::from_bits(bits))
}

/// Serde adapter so hex-float decoding errors carry the document position.
pub(crate) mod serde_hex {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::format(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        let text = String::deserialize(d)?;
        super::parse(&text).map_err(D::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub(crate) struct HexF64(#[serde(with = "serde_hex")] pub f64);

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_spellings() {
        assert_eq!(format(1.0), "0x1p+0");
        assert_eq!(format(3.0), "0x1.8p+1");
        assert_eq!(format(-0.5), "-0x1p-1");
        assert_eq!(format(0.0), "0x0p+0");
        assert_eq!(format(-0.0), "-0x0p+0");
        assert_eq!(format(f64::MIN_POSITIVE / 2.0), "0x0.8p-1022");
        assert_eq!(parse("0x1.8p+1"), Ok(3.0));
        assert!(parse("0x2p+0").is_err());
        assert!(parse("1.5").is_err());
        assert!(parse("inf").is_err());
        assert!(parse("0x1.p+0").is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(bits in any::<u64>()) {
            let v = f64::from_bits(bits);
            prop_assume!(v.is_finite());
            let back = parse(&format(v)).unwrap();
            prop_assert_eq!(back.to_bits(), bits);
        }
    }
}
