//! Decimal float formatting with 17 significant digits.
//!
//! Every f64 written to a dataset, checkpoint or CSV goes through
//! [`format`], which round-trips exactly through a correctly rounded parser.

use serde::ser::Error as _;
use serde::{Serialize, Serializer};
use serde_json::value::RawValue;

/// Formats `x` in scientific notation with 17 significant digits.
pub fn format(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn format_slice(xs: &[f64]) -> String {
    let mut out = String::with_capacity(xs.len() * 24 + 2);
    out.push('[');
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&format(*x));
    }
    out.push(']');
    out
}

pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    if !x.is_finite() {
        return Err(S::Error::custom(format!("non-finite value {x}")));
    }
    let raw = RawValue::from_string(format(*x)).map_err(S::Error::custom)?;
    raw.serialize(s)
}

pub fn serialize_vec<S: Serializer>(xs: &[f64], s: S) -> Result<S::Ok, S::Error> {
    if let Some(bad) = xs.iter().find(|x| !x.is_finite()) {
        return Err(S::Error::custom(format!("non-finite value {bad}")));
    }
    let raw = RawValue::from_string(format_slice(xs)).map_err(S::Error::custom)?;
    raw.serialize(s)
}
