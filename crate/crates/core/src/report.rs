//! Machine-readable run reports.
//!
//! Floats are written in scientific notation with 17 significant digits,
//! which round-trips every `f64` exactly; non-finite values become `null`.
//! Struct fields serialize in declaration order, so output is stable.

use std::io;

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter, Serializer};

use crate::condition::{ConditionReport, Verdict};
use crate::config::Config;
use crate::curvature::{CurvatureReport, W32Check};
use crate::rays::{FanSummary, RayOutcome};
use crate::weight::{Admissible, LambdaStep, PartialRange, WeightCertificate};

pub const TOOL: &str = "carleman";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Pretty JSON with fixed-width scientific floats.
pub struct FixedFloatFormatter<'a> {
    inner: PrettyFormatter<'a>,
}

impl Default for FixedFloatFormatter<'_> {
    fn default() -> Self {
        FixedFloatFormatter {
            inner: PrettyFormatter::with_indent(b"  "),
        }
    }
}

impl Formatter for FixedFloatFormatter<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.begin_array(writer)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_array(writer)
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_array_value(writer, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_array_value(writer)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.begin_object(writer)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_object(writer)
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_object_key(writer, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.begin_object_value(writer)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_object_value(writer)
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = Serializer::with_formatter(&mut buf, FixedFloatFormatter::default());
    value.serialize(&mut ser).expect("in-memory JSON serialization");
    buf.push(b'\n');
    String::from_utf8(buf).expect("JSON output is UTF-8")
}

/// One search on a grid, followed by a recheck on the refined grid.
#[derive(Debug, Clone, Serialize)]
pub struct ConstructAttempt {
    pub resolution: usize,
    pub lambda: f64,
    pub mu0: f64,
    pub recheck_resolution: usize,
    pub recheck_verdict: Verdict,
    pub recheck_mu0: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConstructReport {
    pub admissible: Vec<Admissible>,
    pub partial_ranges: Vec<PartialRange>,
    pub chosen: Option<Admissible>,
    pub c: Option<f64>,
    pub certificate: Option<WeightCertificate>,
    pub reverification: Option<ConditionReport>,
    pub attempts: Vec<ConstructAttempt>,
    /// Present when the search failed: the failing steps tried.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub failed_steps: Vec<LambdaStep>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_failing_report: Option<ConditionReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CurvatureRun {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w32: Option<W32Check>,
    pub curvature: CurvatureReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct RaysRun {
    pub center: Vec<f64>,
    pub horizon: f64,
    pub step: f64,
    pub summary: FanSummary,
    pub rays: Vec<RayOutcome>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Verify(ConditionReport),
    Construct(Box<ConstructReport>),
    Curvature(CurvatureRun),
    Rays(RaysRun),
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: Config,
    pub verdict: String,
    pub exit_code: i32,
    pub outcome: Outcome,
    pub duration_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExampleStep {
    pub expected: String,
    pub observed: String,
    pub matched: bool,
    pub report: RunReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExampleRun {
    pub name: String,
    pub description: String,
    pub matched: bool,
    pub steps: Vec<ExampleStep>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExamplesReport {
    pub tool: &'static str,
    pub version: &'static str,
    pub all_matched: bool,
    pub examples: Vec<ExampleRun>,
}

/// Drops every `"duration_seconds"` line, for comparing reports.
pub fn without_durations(json: &str) -> String {
    json.lines()
        .filter(|l| !l.trim_start().starts_with("\"duration_seconds\""))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Sample {
        a: f64,
        b: Vec<f64>,
        c: f64,
        d: Option<f64>,
    }

    #[test]
    fn floats_have_seventeen_digits_and_round_trip() {
        let s = Sample {
            a: 0.1,
            b: vec![2.0, -1.0 / 3.0],
            c: f64::NAN,
            d: None,
        };
        let out = to_json(&s);
        assert!(out.contains("\"a\": 1.0000000000000001e-1"), "{out}");
        assert!(out.contains("2.0000000000000000e0"));
        assert!(out.contains("\"c\": null"));
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["a"].as_f64().unwrap(), 0.1);
        assert_eq!(v["b"][1].as_f64().unwrap(), -1.0 / 3.0);
    }

    #[test]
    fn duration_lines_are_stripped() {
        let text = "{\n  \"x\": 1,\n  \"duration_seconds\": 2.5e0\n}";
        assert_eq!(without_durations(text), "{\n  \"x\": 1,\n}");
    }
}
