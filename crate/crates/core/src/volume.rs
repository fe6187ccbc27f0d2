//! 4-D volumetric time series, voxel masks, and mask derivation strategies.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::reduce;

/// A 4-D scan laid out voxel-major: the trace of voxel `i` occupies
/// `values[i * frames .. (i + 1) * frames]`, and the linear voxel index runs
/// x-fastest over the grid `(nx, ny, nz)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesVolume {
    dims: (usize, usize, usize),
    frames: usize,
    values: Vec<f64>,
    voxel_mm: Option<[f64; 3]>,
    tr: Option<f64>,
}

impl TimeSeriesVolume {
    /// Builds a volume from voxel-major samples, validating shape, a minimum
    /// of two frames, and that every stored value is finite.
    pub fn new(dims: (usize, usize, usize), frames: usize, values: Vec<f64>) -> Result<Self> {
        let (nx, ny, nz) = dims;
        let voxels = nx * ny * nz;
        if voxels == 0 {
            return Err(Error::InvalidInput(format!(
                "volume grid must be non-empty, got {nx}x{ny}x{nz}"
            )));
        }
        if frames < 2 {
            return Err(Error::InvalidInput(format!(
                "volume needs at least 2 frames, got {frames}"
            )));
        }
        if values.len() != voxels * frames {
            return Err(Error::InvalidInput(format!(
                "expected {} values for {nx}x{ny}x{nz} voxels x {frames} frames, got {}",
                voxels * frames,
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite value at voxel {}, frame {}",
                k / frames,
                k % frames + 1
            )));
        }
        Ok(TimeSeriesVolume {
            dims,
            frames,
            values,
            voxel_mm: None,
            tr: None,
        })
    }

    /// Attaches optional voxel spacing (mm) and repetition time (seconds).
    pub fn with_spacing(mut self, voxel_mm: Option<[f64; 3]>, tr: Option<f64>) -> Self {
        self.voxel_mm = voxel_mm;
        self.tr = tr;
        self
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    /// Total number of voxels in the grid.
    pub fn voxel_count(&self) -> usize {
        self.dims.0 * self.dims.1 * self.dims.2
    }

    /// Number of time points `T`.
    pub fn frames(&self) -> usize {
        self.frames
    }

    /// The full time trace of one voxel.
    pub fn trace(&self, voxel: usize) -> &[f64] {
        &self.values[voxel * self.frames..(voxel + 1) * self.frames]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn voxel_mm(&self) -> Option<[f64; 3]> {
        self.voxel_mm
    }

    pub fn tr(&self) -> Option<f64> {
        self.tr
    }
}

/// Boolean voxel selection over a grid; always selects at least one voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    dims: (usize, usize, usize),
    flags: Vec<bool>,
    count: usize,
}

impl Mask {
    /// Builds a mask from per-voxel flags, rejecting an empty selection.
    pub fn from_flags(dims: (usize, usize, usize), flags: Vec<bool>) -> Result<Self> {
        let voxels = dims.0 * dims.1 * dims.2;
        if flags.len() != voxels {
            return Err(Error::Geometry(format!(
                "mask has {} flags but the grid {}x{}x{} holds {voxels} voxels",
                flags.len(),
                dims.0,
                dims.1,
                dims.2
            )));
        }
        let count = flags.iter().filter(|f| **f).count();
        if count == 0 {
            return Err(Error::Degenerate("mask selects no voxels".into()));
        }
        Ok(Mask { dims, flags, count })
    }

    /// Mask selecting every voxel of the grid.
    pub fn all(dims: (usize, usize, usize)) -> Result<Self> {
        let voxels = dims.0 * dims.1 * dims.2;
        Mask::from_flags(dims, vec![true; voxels])
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    /// Number of selected voxels `I`.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn is_included(&self, voxel: usize) -> bool {
        self.flags[voxel]
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    /// Linear indices of the selected voxels, ascending.
    pub fn indices(&self) -> Vec<usize> {
        self.flags
            .iter()
            .enumerate()
            .filter_map(|(i, f)| f.then_some(i))
            .collect()
    }
}

/// Rules for deriving a mask from the data itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskStrategy {
    /// Every voxel.
    All,
    /// Voxels whose temporal mean is nonzero.
    NonzeroMean,
    /// Voxels whose temporal mean is at least `fraction` times the grand mean
    /// of all positive voxel means — a cheap interior-of-the-head heuristic.
    MeanFraction(f64),
    /// Voxels whose trace is not constant over time.
    Nonconstant,
}

impl fmt::Display for MaskStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaskStrategy::All => write!(f, "all"),
            MaskStrategy::NonzeroMean => write!(f, "nonzero-mean"),
            MaskStrategy::MeanFraction(frac) => write!(f, "mean-frac={frac}"),
            MaskStrategy::Nonconstant => write!(f, "nonconstant"),
        }
    }
}

impl FromStr for MaskStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(MaskStrategy::All),
            "nonzero-mean" => Ok(MaskStrategy::NonzeroMean),
            "nonconstant" => Ok(MaskStrategy::Nonconstant),
            _ => {
                if let Some(frac) = s.strip_prefix("mean-frac=") {
                    let f: f64 = frac.parse().map_err(|_| {
                        Error::Config(format!("mean-frac: cannot parse '{frac}' as a number"))
                    })?;
                    Ok(MaskStrategy::MeanFraction(f))
                } else {
                    Err(Error::Config(format!(
                        "unknown mask strategy '{s}' (expected all, nonzero-mean, mean-frac=F, or nonconstant)"
                    )))
                }
            }
        }
    }
}

fn trace_mean(trace: &[f64]) -> f64 {
    let mut sum = 0.0;
    for &v in trace {
        sum += v;
    }
    sum / trace.len() as f64
}

fn trace_is_constant(trace: &[f64]) -> bool {
    let first = trace[0];
    trace.iter().all(|&v| v == first)
}

/// Applies a `MaskStrategy` to a volume.
pub fn derive_mask(volume: &TimeSeriesVolume, strategy: MaskStrategy) -> Result<Mask> {
    let voxels = volume.voxel_count();
    let flags: Vec<bool> = match strategy {
        MaskStrategy::All => vec![true; voxels],
        MaskStrategy::NonzeroMean => (0..voxels)
            .into_par_iter()
            .map(|i| trace_mean(volume.trace(i)) != 0.0)
            .collect(),
        MaskStrategy::Nonconstant => (0..voxels)
            .into_par_iter()
            .map(|i| !trace_is_constant(volume.trace(i)))
            .collect(),
        MaskStrategy::MeanFraction(fraction) => {
            if !fraction.is_finite() || fraction <= 0.0 || fraction > 1.0 {
                return Err(Error::InvalidInput(format!(
                    "mean-frac fraction must lie in (0, 1], got {fraction}"
                )));
            }
            let means: Vec<f64> = (0..voxels)
                .into_par_iter()
                .map(|i| trace_mean(volume.trace(i)))
                .collect();
            let positive = means.iter().filter(|m| **m > 0.0).count();
            if positive == 0 {
                return Err(Error::Degenerate(
                    "mean-frac mask: no voxel has a positive temporal mean".into(),
                ));
            }
            let grand =
                reduce::blocked_sum(voxels, |i| if means[i] > 0.0 { means[i] } else { 0.0 })
                    / positive as f64;
            let threshold = fraction * grand;
            means.iter().map(|&m| m >= threshold).collect()
        }
    };
    Mask::from_flags(volume.dims(), flags).map_err(|e| match e {
        Error::Degenerate(_) => {
            Error::Degenerate(format!("mask strategy '{strategy}' selects no voxels"))
        }
        other => other,
    })
}
