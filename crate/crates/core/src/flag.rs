//! Flagging artifact-suspect frame pairs in a standardized series.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::metrics::DvarsSeries;
use crate::stats::median_raw;

/// Ratio of the median absolute deviation to the standard deviation for a
/// normal distribution; multiplying a MAD by this gives a sigma estimate.
const NORMAL_MAD_TO_SD: f64 = 1.4826;

/// When the robust spread collapses to zero, flagging falls back to this
/// absolute threshold.
const FALLBACK_ABS_THRESHOLD: f64 = 1.5;

/// How to decide which frame pairs get flagged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlagPolicy {
    /// Flag values strictly above a fixed threshold.
    Absolute { threshold: f64 },
    /// Flag values whose robust z-score (median/MAD based) exceeds `z`.
    RobustZ { z: f64 },
    /// Flag nothing.
    None,
}

impl fmt::Display for FlagPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FlagPolicy::Absolute { threshold } => write!(f, "abs={threshold}"),
            FlagPolicy::RobustZ { z } => write!(f, "zrobust={z}"),
            FlagPolicy::None => write!(f, "none"),
        }
    }
}

impl FromStr for FlagPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "none" {
            return Ok(FlagPolicy::None);
        }
        let parse_value = |tag: &str, v: &str| -> Result<f64> {
            let x: f64 = v
                .parse()
                .map_err(|_| Error::Config(format!("{tag}: cannot parse '{v}' as a number")))?;
            if !x.is_finite() {
                return Err(Error::Config(format!("{tag}: value must be finite")));
            }
            Ok(x)
        };
        if let Some(v) = s.strip_prefix("abs=") {
            return Ok(FlagPolicy::Absolute {
                threshold: parse_value("abs", v)?,
            });
        }
        if let Some(v) = s.strip_prefix("zrobust=") {
            return Ok(FlagPolicy::RobustZ {
                z: parse_value("zrobust", v)?,
            });
        }
        Err(Error::Config(format!(
            "unknown flag policy '{s}' (expected abs=T, zrobust=Z, or none)"
        )))
    }
}

/// Per-frame flags plus a warning when the policy had to fall back.
#[derive(Debug, Clone, PartialEq)]
pub struct FlagOutcome {
    pub flags: Vec<bool>,
    pub warning: Option<String>,
}

impl FlagOutcome {
    pub fn flagged_count(&self) -> usize {
        self.flags.iter().filter(|f| **f).count()
    }
}

/// Applies a flagging policy to a series.
///
/// The robust-z policy centers on the median and scales by the normalized
/// median absolute deviation, so a handful of corrupted frames cannot drag
/// the threshold up after themselves. If that spread is zero the policy
/// falls back to a fixed absolute threshold and says so in the warning.
pub fn flag_outliers(series: &DvarsSeries, policy: &FlagPolicy) -> FlagOutcome {
    let values = series.values();
    match *policy {
        FlagPolicy::None => FlagOutcome {
            flags: vec![false; values.len()],
            warning: None,
        },
        FlagPolicy::Absolute { threshold } => FlagOutcome {
            flags: values.iter().map(|&v| v > threshold).collect(),
            warning: None,
        },
        FlagPolicy::RobustZ { z } => {
            let median = median_raw(values).expect("series is non-empty");
            let deviations: Vec<f64> = values.iter().map(|&v| (v - median).abs()).collect();
            let mad = median_raw(&deviations).expect("series is non-empty");
            let spread = NORMAL_MAD_TO_SD * mad;
            if spread == 0.0 {
                return FlagOutcome {
                    flags: values.iter().map(|&v| v > FALLBACK_ABS_THRESHOLD).collect(),
                    warning: Some(format!(
                        "robust flagging: spread is zero, fell back to absolute threshold {FALLBACK_ABS_THRESHOLD}"
                    )),
                };
            }
            FlagOutcome {
                flags: values.iter().map(|&v| (v - median) / spread > z).collect(),
                warning: None,
            }
        }
    }
}
