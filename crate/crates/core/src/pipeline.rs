//! End-to-end computation: mask, noise parameters, all requested variants,
//! flags, and the assembled report.

use std::path::PathBuf;

use crate::error::Result;
use crate::flag::{flag_outliers, FlagPolicy};
use crate::metrics::{
    dvars, dvars_standardized, dvars_voxel_standardized, estimate_noise_params,
    min_frames_for_estimation, DvarsSeries, EstimatorOptions,
};
use crate::nifti;
use crate::report::{FrameRecord, QcReport, ReportMeta, ReportSummary};
use crate::stats::median_raw;
use crate::volume::{derive_mask, Mask, MaskStrategy, TimeSeriesVolume};

/// Where the voxel mask comes from.
#[derive(Debug, Clone)]
pub enum MaskSource {
    /// A 3-D NIfTI-1 file; voxels greater than zero are included.
    File(PathBuf),
    /// Derived from the data itself.
    Strategy(MaskStrategy),
}

impl Default for MaskSource {
    fn default() -> Self {
        MaskSource::Strategy(MaskStrategy::MeanFraction(0.1))
    }
}

/// Which standardized variants to include; the raw metric is always
/// computed, since it is the numerator of the standardized one anyway.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VariantSet {
    pub star: bool,
    pub star_star: bool,
}

impl Default for VariantSet {
    fn default() -> Self {
        VariantSet {
            star: true,
            star_star: true,
        }
    }
}

/// Full configuration of a compute run.
#[derive(Debug, Clone, Default)]
pub struct ComputeOptions {
    pub mask: MaskSource,
    pub estimator: EstimatorOptions,
    pub variants: VariantSet,
    pub flag_policy: FlagPolicyOption,
}

/// Wrapper so `ComputeOptions` can derive `Default` with robust-z 5.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlagPolicyOption(pub FlagPolicy);

impl Default for FlagPolicyOption {
    fn default() -> Self {
        FlagPolicyOption(FlagPolicy::RobustZ { z: 5.0 })
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Computes every requested metric for a volume and assembles the report.
///
/// When standardization is requested but the input is too short for the
/// estimator, the run degrades to the raw metric and says so in a warning
/// instead of failing; genuine estimation failures still surface as errors.
pub fn compute_report(
    volume: &TimeSeriesVolume,
    input_label: &str,
    options: &ComputeOptions,
) -> Result<QcReport> {
    let mask = resolve_mask(volume, &options.mask)?;
    let mask_label = match &options.mask {
        MaskSource::File(path) => format!("file:{}", path.display()),
        MaskSource::Strategy(strategy) => strategy.to_string(),
    };

    let mut warnings: Vec<String> = Vec::new();
    let mut notes: Vec<String> = Vec::new();
    let frames = volume.frames();

    let wants_standardized = options.variants.star || options.variants.star_star;
    let min_frames = min_frames_for_estimation(options.estimator);

    // Raw series, the voxel set it covers, and the standardized series.
    let mut voxels_used = mask.count();
    let mut dropped = 0usize;
    let mut excluded = 0usize;
    let mut star: Option<DvarsSeries> = None;
    let mut star_star: Option<DvarsSeries> = None;

    let raw = if wants_standardized && frames >= min_frames {
        let params = estimate_noise_params(volume, &mask, options.estimator)?;
        dropped = params.dropped();
        if dropped > 0 {
            warnings.push(format!(
                "{dropped} masked voxels dropped from estimation (constant over time)"
            ));
        }
        // All variants share the estimator's effective voxel set, so the
        // standardized values are exactly raw / sqrt(expected square).
        let effective = params.effective_mask();
        voxels_used = effective.count();
        if options.variants.star_star {
            let out = dvars_voxel_standardized(volume, &mask, &params)?;
            excluded = out.excluded;
            if excluded > 0 {
                warnings.push(format!(
                    "{excluded} voxels excluded from voxelwise standardization (vanishing difference variance)"
                ));
            }
            star_star = Some(out.series);
        }
        let star_series = dvars_standardized(volume, &mask, &params)?;
        let raw = dvars(volume, &effective)?;
        if options.variants.star {
            star = Some(star_series);
        }
        notes.push(
            "noise model: assumes spatial and temporal correlation separate, with voxels \
             standardized independently; spatial structure is not modeled or verified"
                .into(),
        );
        notes.push(
            "lag-1 correlation is estimated by the plain sample autocorrelation; strong artifacts can bias it"
                .into(),
        );
        raw
    } else {
        if wants_standardized {
            warnings.push(format!(
                "standardized variants skipped: parameter estimation needs at least {min_frames} frames{}, input has {frames}",
                if options.estimator.detrend { " with detrending" } else { "" },
            ));
        }
        dvars(volume, &mask)?
    };

    let FlagPolicyOption(policy) = options.flag_policy;
    let flags = match (&star, policy) {
        (_, FlagPolicy::None) => vec![false; raw.len()],
        (Some(series), _) => {
            let outcome = flag_outliers(series, &policy);
            if let Some(w) = outcome.warning {
                warnings.push(w);
            }
            outcome.flags
        }
        (None, _) => {
            warnings.push("flagging skipped: no standardized series to flag".into());
            vec![false; raw.len()]
        }
    };
    let flagged_frames = flags.iter().filter(|f| **f).count();

    let summary = ReportSummary {
        dvars_mean: mean(raw.values()),
        dvars_median: median_raw(raw.values())?,
        dvars_star_mean: star.as_ref().map(|s| mean(s.values())),
        dvars_star_median: star.as_ref().map(|s| median_raw(s.values())).transpose()?,
        dvars_star_star_mean: star_star.as_ref().map(|s| mean(s.values())),
        dvars_star_star_median: star_star
            .as_ref()
            .map(|s| median_raw(s.values()))
            .transpose()?,
        dropped_voxels: dropped,
        excluded_voxels: excluded,
        flagged_frames,
    };

    let records: Vec<FrameRecord> = (0..raw.len())
        .map(|k| FrameRecord {
            frame: k + 2,
            dvars: raw.values()[k],
            dvars_star: star.as_ref().map(|s| s.values()[k]),
            dvars_star_star: star_star.as_ref().map(|s| s.values()[k]),
            flag: u8::from(flags[k]),
        })
        .collect();

    Ok(QcReport {
        meta: ReportMeta {
            tool: "dvars".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            input: input_label.into(),
            mask: mask_label,
            robust_sigma: options.estimator.robust_sigma,
            detrend: options.estimator.detrend,
            flag_policy: policy.to_string(),
            voxels_total: volume.voxel_count(),
            voxels_used,
            frames,
            warnings,
            notes,
        },
        summary,
        frames: records,
    })
}

/// Loads a mask for a volume from either source. Exposed for callers that
/// need the mask itself rather than a report.
pub fn resolve_mask(volume: &TimeSeriesVolume, source: &MaskSource) -> Result<Mask> {
    match source {
        MaskSource::File(path) => nifti::load_mask(path, volume.dims()),
        MaskSource::Strategy(strategy) => derive_mask(volume, *strategy),
    }
}
