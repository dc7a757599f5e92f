//! Versioned JSON envelopes and the CSV formats shared by the CLI and the
//! harness.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const SCHEMA_VERSION: u32 = 1;

/// Wraps any report body with a schema version and a kind tag.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Versioned<T> {
    pub schema_version: u32,
    pub kind: String,
    #[serde(flatten)]
    pub body: T,
}

impl<T> Versioned<T> {
    pub fn new(kind: impl Into<String>, body: T) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            kind: kind.into(),
            body,
        }
    }
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, to_json_pretty(value)?)?;
    Ok(())
}

/// Writes a two-column CSV with a header line; floats use the shortest
/// representation that round-trips.
pub fn write_csv_pairs<W: Write>(
    mut out: W,
    header: (&str, &str),
    rows: impl IntoIterator<Item = (f64, f64)>,
) -> Result<()> {
    writeln!(out, "{},{}", header.0, header.1)?;
    for (a, b) in rows {
        writeln!(out, "{a},{b}")?;
    }
    out.flush()?;
    Ok(())
}

/// Serde adapter for floats that may be infinite or NaN: finite values are
/// plain JSON numbers, others the strings `"inf"`, `"-inf"`, `"nan"`.
pub mod float_or_string {
    use serde::de::{self, Deserializer, Visitor};
    use serde::Serializer;
    use std::fmt;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    struct FloatVisitor;

    impl<'de> Visitor<'de> for FloatVisitor {
        type Value = f64;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a number or one of \"inf\", \"-inf\", \"nan\"")
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            match v {
                "inf" | "Infinity" => Ok(f64::INFINITY),
                "-inf" | "-Infinity" => Ok(f64::NEG_INFINITY),
                "nan" | "NaN" => Ok(f64::NAN),
                other => Err(E::custom(format!("unexpected float string {other:?}"))),
            }
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        d.deserialize_any(FloatVisitor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Serialize, Deserialize, PartialEq)]
    struct Holder {
        #[serde(with = "float_or_string")]
        v: f64,
    }

    #[test]
    fn non_finite_floats_roundtrip() {
        for v in [1.5, f64::INFINITY, f64::NEG_INFINITY, 0.1 + 0.2] {
            let s = serde_json::to_string(&Holder { v }).unwrap();
            let back: Holder = serde_json::from_str(&s).unwrap();
            assert_eq!(back.v.to_bits(), v.to_bits(), "{s}");
        }
        assert_eq!(
            serde_json::to_string(&Holder { v: f64::INFINITY }).unwrap(),
            r#"{"v":"inf"}"#
        );
    }

    #[test]
    fn csv_pairs_use_roundtrip_formatting() {
        let mut buf = Vec::new();
        write_csv_pairs(&mut buf, ("k", "kappa_hat"), [(1.0, 0.1 + 0.2)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "k,kappa_hat\n1,0.30000000000000004\n");
    }
}
