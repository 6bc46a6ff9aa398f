//! Atomic data carried by object attributes, event parameters and variable
//! bindings.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// A value: text, exact number, boolean flag, or a finite set of values.
///
/// Numbers are exact rationals so that equality and set membership never
/// depend on floating point rounding.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    Text(String),
    Num(BigRational),
    Flag(bool),
    Set(BTreeSet<Value>),
}

impl Value {
    pub fn text(s: impl Into<String>) -> Self {
        Value::Text(s.into())
    }

    pub fn int(n: i64) -> Self {
        Value::Num(BigRational::from_integer(BigInt::from(n)))
    }

    pub fn set<I: IntoIterator<Item = Value>>(items: I) -> Self {
        Value::Set(items.into_iter().collect())
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Text(_) => "text",
            Value::Num(_) => "number",
            Value::Flag(_) => "boolean",
            Value::Set(_) => "set",
        }
    }

    pub fn as_flag(&self) -> Option<bool> {
        match self {
            Value::Flag(b) => Some(*b),
            _ => None,
        }
    }

    /// Converts a JSON value. Arrays become sets; `null` and objects are
    /// rejected.
    pub fn from_json(v: &serde_json::Value) -> Result<Self, String> {
        match v {
            serde_json::Value::String(s) => Ok(Value::Text(s.clone())),
            serde_json::Value::Bool(b) => Ok(Value::Flag(*b)),
            serde_json::Value::Number(n) => parse_decimal(&n.to_string())
                .map(Value::Num)
                .ok_or_else(|| format!("unsupported number `{n}`")),
            serde_json::Value::Array(items) => items
                .iter()
                .map(Value::from_json)
                .collect::<Result<BTreeSet<_>, _>>()
                .map(Value::Set),
            serde_json::Value::Null => Err("null is not a value".into()),
            serde_json::Value::Object(_) => Err("objects are not values".into()),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Value::Text(s) => serde_json::Value::String(s.clone()),
            Value::Flag(b) => serde_json::Value::Bool(*b),
            Value::Num(n) => {
                if n.is_integer() {
                    if let Some(i) = n.to_integer().to_i64() {
                        return serde_json::Value::from(i);
                    }
                }
                n.to_f64()
                    .and_then(serde_json::Number::from_f64)
                    .map(serde_json::Value::Number)
                    .unwrap_or(serde_json::Value::Null)
            }
            Value::Set(items) => serde_json::Value::Array(items.iter().map(Value::to_json).collect()),
        }
    }
}

impl serde::Serialize for Value {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> serde::Deserialize<'de> for Value {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = serde_json::Value::deserialize(d)?;
        Value::from_json(&raw).map_err(serde::de::Error::custom)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Text(s.to_string())
    }
}

impl From<i64> for Value {
    fn from(n: i64) -> Self {
        Value::int(n)
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Flag(b)
    }
}

/// Parses an optionally signed decimal literal (`12`, `-0.25`, `1e3`) into an
/// exact rational.
pub fn parse_decimal(s: &str) -> Option<BigRational> {
    let (mantissa, exponent) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], s[i + 1..].parse::<i32>().ok()?),
        None => (s, 0),
    };
    let (negative, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = match digits.split_once('.') {
        Some((i, f)) => (i, f),
        None => (digits, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part
        .chars()
        .chain(frac_part.chars())
        .all(|c| c.is_ascii_digit())
    {
        return None;
    }
    let numer = BigInt::from_str(&format!("{int_part}{frac_part}")).ok()?;
    let scale = exponent - frac_part.len() as i32;
    let ten = BigInt::from(10);
    let mut r = BigRational::from_integer(numer);
    if scale >= 0 {
        r *= BigRational::from_integer(num_traits::pow(ten, scale as usize));
    } else {
        r /= BigRational::from_integer(num_traits::pow(ten, (-scale) as usize));
    }
    Some(if negative { -r } else { r })
}

/// Renders a rational as a terminating decimal when possible, otherwise as
/// `p/q`.
pub fn format_number(n: &BigRational) -> String {
    if n.is_integer() {
        return n.to_integer().to_string();
    }
    let mut denom = n.denom().clone();
    let two = BigInt::from(2);
    let five = BigInt::from(5);
    let mut digits = 0usize;
    let mut pow2 = 0usize;
    let mut pow5 = 0usize;
    while (&denom % &two).is_zero() {
        denom /= &two;
        pow2 += 1;
    }
    while (&denom % &five).is_zero() {
        denom /= &five;
        pow5 += 1;
    }
    if !denom.is_one() {
        return format!("{}/{}", n.numer(), n.denom());
    }
    digits += pow2.max(pow5);
    let scaled = n * BigRational::from_integer(num_traits::pow(BigInt::from(10), digits));
    let abs = scaled.to_integer().abs().to_string();
    let padded = format!("{abs:0>width$}", width = digits + 1);
    let (int_part, frac_part) = padded.split_at(padded.len() - digits);
    let sign = if n.is_negative() { "-" } else { "" };
    format!("{sign}{int_part}.{frac_part}")
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Text(s) => {
                f.write_str("\"")?;
                for c in s.chars() {
                    match c {
                        '"' => f.write_str("\\\"")?,
                        '\\' => f.write_str("\\\\")?,
                        '\n' => f.write_str("\\n")?,
                        '\t' => f.write_str("\\t")?,
                        c => write!(f, "{c}")?,
                    }
                }
                f.write_str("\"")
            }
            Value::Num(n) => f.write_str(&format_number(n)),
            Value::Flag(b) => write!(f, "{b}"),
            Value::Set(items) => {
                f.write_str("{")?;
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{v}")?;
                }
                f.write_str("}")
            }
        }
    }
}
