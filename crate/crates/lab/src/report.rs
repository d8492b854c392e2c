//! Run reports: per-check records, serialized as JSON with every float
//! printed to 17 significant digits.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::LabError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// Passes when `value ≤ tolerance`.
    AtMost,
    /// Passes when `value ≥ tolerance` (negative controls, minimum rates).
    AtLeast,
    /// Reported only.
    Diagnostic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    pub inputs_hash: String,
    /// `None` when the check could not be evaluated.
    pub value: Option<f64>,
    pub tolerance: Option<f64>,
    pub relation: Relation,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl CheckRecord {
    pub fn at_most(name: &str, value: f64, tolerance: f64) -> Self {
        Self::build(name, Some(value), Some(tolerance), Relation::AtMost, None)
    }

    pub fn at_least(name: &str, value: f64, tolerance: f64) -> Self {
        Self::build(name, Some(value), Some(tolerance), Relation::AtLeast, None)
    }

    pub fn diagnostic(name: &str, value: f64) -> Self {
        Self::build(name, Some(value), None, Relation::Diagnostic, None)
    }

    pub fn failed(name: &str, message: impl Into<String>) -> Self {
        Self::build(name, None, None, Relation::AtMost, Some(message.into()))
    }

    pub fn with_message(mut self, message: impl Into<String>) -> Self {
        self.message = Some(message.into());
        self
    }

    fn build(name: &str, value: Option<f64>, tolerance: Option<f64>, relation: Relation, message: Option<String>) -> Self {
        let mut r = CheckRecord {
            name: name.to_string(),
            inputs_hash: String::new(),
            value,
            tolerance,
            relation,
            pass: false,
            message,
        };
        r.pass = r.evaluate();
        r
    }

    /// Re-derives `pass` from value, tolerance and relation.
    pub fn evaluate(&self) -> bool {
        match (self.relation, self.value, self.tolerance) {
            (Relation::Diagnostic, _, _) => true,
            (Relation::AtMost, Some(v), Some(t)) => v <= t,
            (Relation::AtLeast, Some(v), Some(t)) => v >= t,
            _ => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub version: String,
    pub config_name: String,
    pub config_sha256: String,
    pub seed: u64,
    pub checks: Vec<CheckRecord>,
    pub pass: bool,
}

impl RunReport {
    pub fn new(config_name: &str, config_sha256: String, seed: u64, checks: Vec<CheckRecord>) -> Self {
        let pass = checks.iter().all(|c| c.pass);
        RunReport {
            schema_version: SCHEMA_VERSION,
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_name: config_name.to_string(),
            config_sha256,
            seed,
            checks,
            pass,
        }
    }

    pub fn to_json(&self) -> Result<Vec<u8>, LabError> {
        let mut out = Vec::new();
        let mut ser = serde_json::Serializer::with_formatter(&mut out, SignificantDigits::default());
        self.serialize(&mut ser)?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, LabError> {
        let de = &mut serde_json::Deserializer::from_slice(bytes);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            LabError::Config(format!("report {path}: {}", e.into_inner()))
        })
    }

    /// Records whose stored `pass` flag disagrees with value and tolerance.
    pub fn inconsistent_records(&self) -> Vec<&CheckRecord> {
        self.checks.iter().filter(|c| c.pass != c.evaluate()).collect()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Pretty-printing JSON formatter writing floats as `{:.16e}`; non-finite
/// values become `null`.
pub struct SignificantDigits {
    inner: serde_json::ser::PrettyFormatter<'static>,
}

impl Default for SignificantDigits {
    fn default() -> Self {
        SignificantDigits {
            inner: serde_json::ser::PrettyFormatter::with_indent(b"  "),
        }
    }
}

pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        "null".to_string()
    }
}

macro_rules! delegate {
    ($($name:ident),*) => {
        $(
            fn $name<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
                self.inner.$name(writer)
            }
        )*
    };
}

impl serde_json::ser::Formatter for SignificantDigits {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(format_float(value).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_array_value(writer, first)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_object_key(writer, first)
    }

    delegate!(begin_array, end_array, end_array_value, begin_object, end_object, begin_object_value, end_object_value);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_through_seventeen_digits() {
        for v in [0.1, 1.0 / 3.0, 2.0f64.sqrt() * 1e-300, 123456789.123456789, -0.0] {
            let s = format_float(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
        assert_eq!(format_float(f64::NAN), "null");
    }

    #[test]
    fn report_serialization_is_stable_and_parsable() {
        let mut r = CheckRecord::at_most("x", 1e-12, 1e-10);
        r.inputs_hash = "abc".into();
        let report = RunReport::new("t", sha256_hex(b"cfg"), 3, vec![r, CheckRecord::diagnostic("d", 0.25)]);
        let bytes = report.to_json().unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.contains("9.9999999999999998e-13"));
        assert_eq!(RunReport::from_json(&bytes).unwrap(), report);
        assert!(report.pass && report.inconsistent_records().is_empty());
    }

    #[test]
    fn relations() {
        assert!(!CheckRecord::at_most("a", 2.0, 1.0).pass);
        assert!(CheckRecord::at_least("a", 2.0, 1.0).pass);
        assert!(CheckRecord::diagnostic("a", f64::INFINITY).pass);
        assert!(!CheckRecord::failed("a", "boom").pass);
    }
}
