//! DVARS and its standardized variants: root-mean-square frame-to-frame
//! signal change over a voxel mask, plus per-voxel noise parameters that
//! give the metric an interpretable null scale.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::reduce;
use crate::stats::{
    ar1_coeff_raw, detrend_linear_raw, diff_variance_predicted, median_raw, robust_sd_iqr_raw,
    sample_sd_raw,
};
use crate::volume::{Mask, TimeSeriesVolume};

/// Which flavor of the metric a series holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DvarsVariant {
    /// Root-mean-square of the frame differences in signal units.
    Raw,
    /// Raw divided by the square root of its expected square under the
    /// per-voxel noise model; hovers around 1 on artifact-free data.
    Star,
    /// Each voxel's difference standardized by its own predicted spread
    /// before averaging; also hovers around 1 on artifact-free data.
    StarStar,
}

impl DvarsVariant {
    pub fn name(self) -> &'static str {
        match self {
            DvarsVariant::Raw => "dvars",
            DvarsVariant::Star => "dvars_star",
            DvarsVariant::StarStar => "dvars_star_star",
        }
    }
}

/// One value per successive frame pair. The series covers frames `2..=T`
/// (1-based): entry `k` describes the change from frame `k + 1` to `k + 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct DvarsSeries {
    variant: DvarsVariant,
    values: Vec<f64>,
}

impl DvarsSeries {
    pub(crate) fn new(variant: DvarsVariant, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("dvars series must not be empty".into()));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput(format!(
                "dvars series value at frame {} is not a finite non-negative number",
                k + 2
            )));
        }
        Ok(DvarsSeries { variant, values })
    }

    pub fn variant(&self) -> DvarsVariant {
        self.variant
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// 1-based frame numbers the entries refer to: `2..=T`.
    pub fn frame_numbers(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.values.len()).map(|k| k + 2)
    }
}

/// Estimator switches for `estimate_noise_params`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EstimatorOptions {
    /// Estimate sigma from the interquartile range instead of the sample
    /// standard deviation, so spikes barely perturb the null scale.
    pub robust_sigma: bool,
    /// Remove a least-squares line from each trace before estimating, to
    /// keep slow drift out of sigma and rho.
    pub detrend: bool,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        EstimatorOptions {
            robust_sigma: true,
            detrend: false,
        }
    }
}

/// Per-voxel noise model over an effective voxel set: standard deviation
/// `sigma`, lag-1 correlation `rho`, and the implied variance of a lag-1
/// difference `2 * (1 - rho) * sigma^2`, precomputed per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelNoiseParams {
    dims: (usize, usize, usize),
    voxels: Vec<usize>,
    sigma: Vec<f64>,
    rho: Vec<f64>,
    diff_var: Vec<f64>,
    dropped: usize,
    options: EstimatorOptions,
}

impl VoxelNoiseParams {
    /// Assembles parameters for an explicit voxel set, validating ranges and
    /// computing each voxel's difference variance from `(sigma, rho)`.
    pub fn new(
        dims: (usize, usize, usize),
        voxels: Vec<usize>,
        sigma: Vec<f64>,
        rho: Vec<f64>,
        options: EstimatorOptions,
        dropped: usize,
    ) -> Result<Self> {
        if voxels.is_empty() {
            return Err(Error::InvalidInput(
                "noise parameters need at least one voxel".into(),
            ));
        }
        if voxels.len() != sigma.len() || voxels.len() != rho.len() {
            return Err(Error::InvalidInput(format!(
                "noise parameter lengths disagree: {} voxels, {} sigma, {} rho",
                voxels.len(),
                sigma.len(),
                rho.len()
            )));
        }
        let total = dims.0 * dims.1 * dims.2;
        for (k, &i) in voxels.iter().enumerate() {
            if i >= total {
                return Err(Error::Geometry(format!(
                    "voxel index {i} is outside the {}x{}x{} grid",
                    dims.0, dims.1, dims.2
                )));
            }
            if k > 0 && voxels[k - 1] >= i {
                return Err(Error::InvalidInput(
                    "voxel indices must be strictly ascending".into(),
                ));
            }
        }
        let mut diff_var = Vec::with_capacity(voxels.len());
        for (k, (&s, &r)) in sigma.iter().zip(&rho).enumerate() {
            let dv = diff_variance_predicted(s, r).map_err(|e| {
                Error::InvalidInput(format!("voxel {}: {e}", voxels[k]))
            })?;
            diff_var.push(dv);
        }
        Ok(VoxelNoiseParams {
            dims,
            voxels,
            sigma,
            rho,
            diff_var,
            dropped,
            options,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    /// Ascending linear indices of the voxels the parameters cover.
    pub fn voxel_indices(&self) -> &[usize] {
        &self.voxels
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    /// Predicted lag-1 difference variance per voxel.
    pub fn diff_var(&self) -> &[f64] {
        &self.diff_var
    }

    /// Voxels the estimator dropped as degenerate (constant over time).
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn options(&self) -> EstimatorOptions {
        self.options
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    /// The voxel set as a mask.
    pub fn effective_mask(&self) -> Mask {
        let total = self.dims.0 * self.dims.1 * self.dims.2;
        let mut flags = vec![false; total];
        for &i in &self.voxels {
            flags[i] = true;
        }
        Mask::from_flags(self.dims, flags).expect("non-empty by construction")
    }
}

fn check_geometry(volume: &TimeSeriesVolume, dims: (usize, usize, usize)) -> Result<()> {
    if volume.dims() != dims {
        return Err(Error::Geometry(format!(
            "volume grid {}x{}x{} does not match {}x{}x{}",
            volume.dims().0,
            volume.dims().1,
            volume.dims().2,
            dims.0,
            dims.1,
            dims.2
        )));
    }
    Ok(())
}

/// Per frame pair, the weighted sum over the voxel set of squared
/// differences. Fixed-size blocks accumulated in voxel order and combined
/// pairwise keep the result independent of the rayon worker count.
fn diff_square_sums(
    volume: &TimeSeriesVolume,
    voxels: &[usize],
    weights: Option<&[f64]>,
) -> Vec<f64> {
    let pairs = volume.frames() - 1;
    let nblocks = voxels.len().div_ceil(reduce::BLOCK);
    let partials: Vec<Vec<f64>> = (0..nblocks)
        .into_par_iter()
        .map(|b| {
            let start = b * reduce::BLOCK;
            let end = (start + reduce::BLOCK).min(voxels.len());
            let mut acc = vec![0.0; pairs];
            for k in start..end {
                let trace = volume.trace(voxels[k]);
                let w = weights.map_or(1.0, |w| w[k]);
                for t in 0..pairs {
                    let d = trace[t + 1] - trace[t];
                    acc[t] += w * d * d;
                }
            }
            acc
        })
        .collect();
    let mut scratch = vec![0.0; nblocks];
    (0..pairs)
        .map(|t| {
            for (b, block) in partials.iter().enumerate() {
                scratch[b] = block[t];
            }
            reduce::pairwise_sum(&scratch)
        })
        .collect()
}

/// Root-mean-square frame-to-frame change over the masked voxels, one value
/// per successive frame pair, in the same units as the data.
///
/// # Examples
///
/// ```
/// use dvars::metrics::dvars;
/// use dvars::volume::{Mask, TimeSeriesVolume};
///
/// let v = TimeSeriesVolume::new((2, 1, 1), 3, vec![1.0, 3.0, 2.0, 2.0, 2.0, 4.0]).unwrap();
/// let series = dvars(&v, &Mask::all(v.dims()).unwrap()).unwrap();
/// assert!((series.values()[0] - 2.0_f64.sqrt()).abs() < 1e-12);
/// ```
pub fn dvars(volume: &TimeSeriesVolume, mask: &Mask) -> Result<DvarsSeries> {
    check_geometry(volume, mask.dims())?;
    let idx = mask.indices();
    let n = idx.len() as f64;
    let values = diff_square_sums(volume, &idx, None)
        .iter()
        .map(|s| (s / n).sqrt())
        .collect();
    DvarsSeries::new(DvarsVariant::Raw, values)
}

/// Fits the per-voxel noise model: optional detrend, then sigma by the
/// robust IQR estimator (or the sample standard deviation) and rho by lag-1
/// autocorrelation. Constant voxels are dropped and counted, not fatal.
pub fn estimate_noise_params(
    volume: &TimeSeriesVolume,
    mask: &Mask,
    options: EstimatorOptions,
) -> Result<VoxelNoiseParams> {
    check_geometry(volume, mask.dims())?;
    let min_frames = min_frames_for_estimation(options);
    if volume.frames() < min_frames {
        return Err(Error::InvalidInput(format!(
            "parameter estimation needs at least {min_frames} frames{}, got {}",
            if options.detrend { " with detrending" } else { "" },
            volume.frames()
        )));
    }
    let idx = mask.indices();
    let fitted: Vec<Option<(f64, f64)>> = idx
        .par_iter()
        .map(|&i| fit_voxel(volume.trace(i), options))
        .collect();

    let mut voxels = Vec::with_capacity(idx.len());
    let mut sigma = Vec::with_capacity(idx.len());
    let mut rho = Vec::with_capacity(idx.len());
    let mut dropped = 0usize;
    for (k, fit) in fitted.iter().enumerate() {
        match fit {
            Some((s, r)) => {
                voxels.push(idx[k]);
                sigma.push(*s);
                rho.push(*r);
            }
            None => dropped += 1,
        }
    }
    if voxels.is_empty() {
        return Err(Error::Degenerate(format!(
            "all {} masked voxels are degenerate (constant over time)",
            idx.len()
        )));
    }
    VoxelNoiseParams::new(volume.dims(), voxels, sigma, rho, options, dropped)
}

/// Smallest number of frames the estimator accepts: 3 for the lag-1 fit,
/// one more when a line is removed first.
pub fn min_frames_for_estimation(options: EstimatorOptions) -> usize {
    if options.detrend {
        4
    } else {
        3
    }
}

fn fit_voxel(trace: &[f64], options: EstimatorOptions) -> Option<(f64, f64)> {
    let detrended;
    let work: &[f64] = if options.detrend {
        detrended = detrend_linear_raw(trace).ok()?;
        &detrended
    } else {
        trace
    };
    let rho = ar1_coeff_raw(work).ok()?;
    let sigma = if options.robust_sigma {
        robust_sd_iqr_raw(work).ok()?
    } else {
        sample_sd_raw(work).ok()?
    };
    Some((sigma, rho))
}

/// Expected squared raw metric under the noise model: the mean of the
/// per-voxel difference variances.
pub fn expected_dvars_sq(params: &VoxelNoiseParams) -> f64 {
    let dv = params.diff_var();
    reduce::blocked_sum(dv.len(), |k| dv[k]) / dv.len() as f64
}

fn check_params_in_mask(mask: &Mask, params: &VoxelNoiseParams) -> Result<()> {
    if mask.dims() != params.dims() {
        return Err(Error::Geometry(format!(
            "mask grid {:?} does not match noise parameter grid {:?}",
            mask.dims(),
            params.dims()
        )));
    }
    for &i in params.voxel_indices() {
        if !mask.is_included(i) {
            return Err(Error::Geometry(format!(
                "noise parameters cover voxel {i}, which is outside the mask"
            )));
        }
    }
    Ok(())
}

/// The raw metric over the parameters' voxel set, divided by the square root
/// of its expected square. Values near 1 mean the data moves as much as the
/// fitted noise model predicts.
pub fn dvars_standardized(
    volume: &TimeSeriesVolume,
    mask: &Mask,
    params: &VoxelNoiseParams,
) -> Result<DvarsSeries> {
    check_geometry(volume, mask.dims())?;
    check_params_in_mask(mask, params)?;
    let expected = expected_dvars_sq(params);
    if expected <= 0.0 {
        return Err(Error::Degenerate(
            "null variance is zero; check the mask and estimator options".into(),
        ));
    }
    let scale = expected.sqrt();
    let n = params.len() as f64;
    let values = diff_square_sums(volume, params.voxel_indices(), None)
        .iter()
        .map(|s| (s / n).sqrt() / scale)
        .collect();
    DvarsSeries::new(DvarsVariant::Star, values)
}

/// A voxelwise-standardized series plus the count of voxels excluded for
/// vanishing difference variance.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelStandardized {
    pub series: DvarsSeries,
    pub excluded: usize,
}

/// Standardizes each voxel's difference by its own predicted spread before
/// the root-mean-square, giving every voxel equal weight. Voxels whose
/// predicted difference variance vanishes (relative to the median) are
/// excluded and counted.
pub fn dvars_voxel_standardized(
    volume: &TimeSeriesVolume,
    mask: &Mask,
    params: &VoxelNoiseParams,
) -> Result<VoxelStandardized> {
    check_geometry(volume, mask.dims())?;
    check_params_in_mask(mask, params)?;
    let dv = params.diff_var();
    let median = median_raw(dv)?;
    let floor = 1e-12 * median;
    let mut voxels = Vec::with_capacity(params.len());
    let mut weights = Vec::with_capacity(params.len());
    for (k, &i) in params.voxel_indices().iter().enumerate() {
        if dv[k] > floor {
            voxels.push(i);
            weights.push(1.0 / dv[k]);
        }
    }
    if voxels.is_empty() {
        return Err(Error::Degenerate(
            "every voxel has vanishing predicted difference variance".into(),
        ));
    }
    let excluded = params.len() - voxels.len();
    let n = voxels.len() as f64;
    let values = diff_square_sums(volume, &voxels, Some(&weights))
        .iter()
        .map(|s| (s / n).sqrt())
        .collect();
    Ok(VoxelStandardized {
        series: DvarsSeries::new(DvarsVariant::StarStar, values)?,
        excluded,
    })
}
