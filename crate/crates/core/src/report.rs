//! The QC report: one record per frame pair plus run metadata and summary
//! statistics, rendered as TSV (6 significant digits) or JSON (full
//! precision, round-trips losslessly).

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Run provenance and settings, embedded in every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub tool: String,
    pub version: String,
    pub input: String,
    pub mask: String,
    pub robust_sigma: bool,
    pub detrend: bool,
    pub flag_policy: String,
    /// Voxels in the grid.
    pub voxels_total: usize,
    /// Voxels the metric was computed over.
    pub voxels_used: usize,
    /// Time points in the input.
    pub frames: usize,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
}

/// Whole-run statistics over the per-frame values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub dvars_mean: f64,
    pub dvars_median: f64,
    pub dvars_star_mean: Option<f64>,
    pub dvars_star_median: Option<f64>,
    pub dvars_star_star_mean: Option<f64>,
    pub dvars_star_star_median: Option<f64>,
    /// Voxels the estimator dropped as constant.
    pub dropped_voxels: usize,
    /// Voxels excluded from the voxelwise variant for vanishing
    /// predicted difference variance.
    pub excluded_voxels: usize,
    pub flagged_frames: usize,
}

/// One row per successive frame pair; `frame` is the 1-based later frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: usize,
    pub dvars: f64,
    pub dvars_star: Option<f64>,
    pub dvars_star_star: Option<f64>,
    /// 1 when the frame pair is flagged, else 0.
    pub flag: u8,
}

/// A complete quality-control report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcReport {
    pub meta: ReportMeta,
    pub summary: ReportSummary,
    pub frames: Vec<FrameRecord>,
}

/// Output encodings for a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Tsv,
    Json,
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReportFormat::Tsv => write!(f, "tsv"),
            ReportFormat::Json => write!(f, "json"),
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(ReportFormat::Tsv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(Error::Config(format!(
                "unknown report format '{s}' (expected tsv or json)"
            ))),
        }
    }
}

/// Formats with exactly 6 significant digits: fixed-point while the
/// exponent stays in a readable band, scientific outside it. Deterministic,
/// locale-free.
fn sig6(v: f64) -> String {
    if v == 0.0 {
        return "0.00000".to_string();
    }
    let e = v.abs().log10().floor() as i32;
    if (-5..=5).contains(&e) {
        let s = format!("{:.*}", (5 - e).max(0) as usize, v);
        // Rounding can carry into the next decade (0.99999996 -> "1.000000");
        // re-render once so the digit count stays at six.
        let rounded: f64 = s.parse().unwrap_or(v);
        if rounded != 0.0 {
            let e2 = rounded.abs().log10().floor() as i32;
            if e2 != e {
                return if (-5..=5).contains(&e2) {
                    format!("{:.*}", (5 - e2).max(0) as usize, v)
                } else {
                    format!("{:.5e}", v)
                };
            }
        }
        s
    } else {
        format!("{:.5e}", v)
    }
}

fn sig6_opt(v: Option<f64>) -> String {
    match v {
        Some(v) => sig6(v),
        None => "na".to_string(),
    }
}

/// Renders a report to text. The TSV form is the frame table only; the JSON
/// form carries the full report and parses back to an identical value.
pub fn render_report(report: &QcReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Tsv => {
            let mut out = String::from("frame\tdvars\tdvars_star\tdvars_star_star\tflag\n");
            for rec in &report.frames {
                out.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{}\n",
                    rec.frame,
                    sig6(rec.dvars),
                    sig6_opt(rec.dvars_star),
                    sig6_opt(rec.dvars_star_star),
                    rec.flag
                ));
            }
            out
        }
        ReportFormat::Json => {
            let mut out =
                serde_json::to_string_pretty(report).expect("report serialization cannot fail");
            out.push('\n');
            out
        }
    }
}

/// Writes a rendered report to a file.
pub fn write_report(report: &QcReport, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, render_report(report, format)).map_err(|e| Error::io(path, e))
}

/// Parses a JSON report back into a value.
pub fn parse_json_report(text: &str) -> Result<QcReport> {
    serde_json::from_str(text)
        .map_err(|e| Error::InvalidInput(format!("cannot parse JSON report: {e}")))
}
