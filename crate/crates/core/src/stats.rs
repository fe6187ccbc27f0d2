//! Scalar statistics on 1-D series: quantiles, spread estimators, lag-1
//! autocorrelation, and linear detrending.

use crate::error::{Error, Result};

/// Ratio of the interquartile range to the standard deviation for a normal
/// distribution; dividing an IQR by this turns it into a sigma estimate.
const NORMAL_IQR_TO_SD: f64 = 1.349;

/// A non-empty 1-D series of finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct Series(Vec<f64>);

impl Series {
    /// Validates that `values` is non-empty and contains only finite numbers.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("series must not be empty".into()));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "series contains a non-finite value at index {k}"
            )));
        }
        Ok(Series(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Quantile by linear interpolation at rank `(n - 1) * p` of the sorted data.
///
/// `p` must lie in `[0, 1]`; `p = 0` and `p = 1` return the minimum and
/// maximum.
///
/// # Examples
///
/// ```
/// use dvars::stats::{quantile, Series};
///
/// let s = Series::new(vec![0.0, 1.0, 2.0, 3.0]).unwrap();
/// assert!((quantile(&s, 0.25).unwrap() - 0.75).abs() < 1e-12);
/// ```
pub fn quantile(series: &Series, p: f64) -> Result<f64> {
    let mut sorted = series.values().to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    quantile_sorted(&sorted, p)
}

/// Quantile of already-sorted data; shared by `quantile` and `robust_sd_iqr`.
pub(crate) fn quantile_sorted(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::InvalidInput("quantile of an empty series".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidInput(format!(
            "quantile probability must lie in [0, 1], got {p}"
        )));
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = h - lo as f64;
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

/// Robust spread estimate: interquartile range divided by the normal-theory
/// constant, so the result matches the standard deviation on clean normal
/// data while a small fraction of wild values barely moves it.
pub fn robust_sd_iqr(series: &Series) -> Result<f64> {
    robust_sd_iqr_raw(series.values())
}

pub(crate) fn robust_sd_iqr_raw(values: &[f64]) -> Result<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25)?;
    let q3 = quantile_sorted(&sorted, 0.75)?;
    Ok((q3 - q1) / NORMAL_IQR_TO_SD)
}

/// Square root of the unbiased sample variance (divisor `n - 1`).
pub fn sample_sd(series: &Series) -> Result<f64> {
    sample_sd_raw(series.values())
}

pub(crate) fn sample_sd_raw(values: &[f64]) -> Result<f64> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "sample_sd needs at least 2 samples, got {n}"
        )));
    }
    // Welford's online update keeps the accumulation stable for large means.
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (k, &x) in values.iter().enumerate() {
        let delta = x - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (x - mean);
    }
    Ok((m2 / (n - 1) as f64).sqrt())
}

/// Lag-1 autocorrelation: cross products of deviations from the single full
/// mean over the full sum of squared deviations. The ratio lies in `[-1, 1]`
/// by Cauchy-Schwarz; a final clamp guards against rounding spill.
pub fn ar1_coeff(series: &Series) -> Result<f64> {
    ar1_coeff_raw(series.values())
}

pub(crate) fn ar1_coeff_raw(values: &[f64]) -> Result<f64> {
    let n = values.len();
    if n < 3 {
        return Err(Error::InvalidInput(format!(
            "ar1_coeff needs at least 3 samples, got {n}"
        )));
    }
    let mut sum = 0.0;
    for &x in values {
        sum += x;
    }
    let mean = sum / n as f64;
    let mut den = 0.0;
    for &x in values {
        let d = x - mean;
        den += d * d;
    }
    if den == 0.0 {
        return Err(Error::Degenerate(
            "ar1_coeff of a constant series (zero variance)".into(),
        ));
    }
    let mut num = 0.0;
    for t in 1..n {
        num += (values[t] - mean) * (values[t - 1] - mean);
    }
    Ok((num / den).clamp(-1.0, 1.0))
}

/// Residuals after removing the least-squares line fit against the sample
/// index `0, 1, 2, ...`. The residuals are invariant to shifting the index.
pub fn detrend_linear(series: &Series) -> Result<Series> {
    let residuals = detrend_linear_raw(series.values())?;
    Ok(Series(residuals))
}

pub(crate) fn detrend_linear_raw(values: &[f64]) -> Result<Vec<f64>> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "detrend_linear needs at least 2 samples, got {n}"
        )));
    }
    let nf = n as f64;
    let xbar = (nf - 1.0) / 2.0;
    let mut ysum = 0.0;
    for &y in values {
        ysum += y;
    }
    let ybar = ysum / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (t, &y) in values.iter().enumerate() {
        let dx = t as f64 - xbar;
        sxx += dx * dx;
        sxy += dx * (y - ybar);
    }
    let slope = sxy / sxx;
    Ok(values
        .iter()
        .enumerate()
        .map(|(t, &y)| y - (ybar + slope * (t as f64 - xbar)))
        .collect())
}

/// Variance of the lag-1 difference of a stationary AR(1) process with
/// standard deviation `sigma` and lag-1 correlation `rho`:
/// `2 * (1 - rho) * sigma^2`.
pub fn diff_variance_predicted(sigma: f64, rho: f64) -> Result<f64> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::InvalidInput(format!(
            "diff_variance_predicted: sigma must be finite and >= 0, got {sigma}"
        )));
    }
    if !rho.is_finite() || !(-1.0..=1.0).contains(&rho) {
        return Err(Error::InvalidInput(format!(
            "diff_variance_predicted: rho must lie in [-1, 1], got {rho}"
        )));
    }
    Ok(2.0 * (1.0 - rho) * sigma * sigma)
}

/// Median shorthand used by flagging and voxelwise standardization.
pub(crate) fn median_raw(values: &[f64]) -> Result<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    quantile_sorted(&sorted, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(values: &[f64]) -> Series {
        Series::new(values.to_vec()).unwrap()
    }

    #[test]
    fn series_rejects_empty_and_non_finite() {
        assert!(Series::new(vec![]).is_err());
        let err = Series::new(vec![1.0, f64::NAN]).unwrap_err();
        assert!(err.to_string().contains("index 1"), "{err}");
        assert!(Series::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn quantile_interpolates_between_order_statistics() {
        let s = series(&[3.0, 0.0, 2.0, 1.0]); // sorting is internal
        assert!((quantile(&s, 0.25).unwrap() - 0.75).abs() < 1e-12);
        assert_eq!(quantile(&s, 0.0).unwrap(), 0.0);
        assert_eq!(quantile(&s, 1.0).unwrap(), 3.0);
        assert!((quantile(&s, 0.5).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn quantile_of_single_element_is_that_element() {
        let s = series(&[7.5]);
        for p in [0.0, 0.3, 1.0] {
            assert_eq!(quantile(&s, p).unwrap(), 7.5);
        }
    }

    #[test]
    fn quantile_rejects_out_of_range_probability() {
        let s = series(&[1.0, 2.0]);
        assert!(quantile(&s, -0.1).is_err());
        assert!(quantile(&s, 1.1).is_err());
        assert!(quantile(&s, f64::NAN).is_err());
    }

    #[test]
    fn robust_sd_of_consecutive_integers() {
        // IQR of {0,1,2,3} is 2.25 - 0.75 = 1.5 by the interpolation rule.
        let s = series(&[0.0, 1.0, 2.0, 3.0]);
        let got = robust_sd_iqr(&s).unwrap();
        assert!((got - 1.111934766493699).abs() < 1e-12, "got {got}");
    }

    #[test]
    fn robust_sd_of_constant_series_is_zero() {
        let s = series(&[4.0, 4.0, 4.0, 4.0]);
        assert_eq!(robust_sd_iqr(&s).unwrap(), 0.0);
    }

    #[test]
    fn sample_sd_matches_hand_values() {
        assert!((sample_sd(&series(&[0.0, 2.0])).unwrap() - std::f64::consts::SQRT_2).abs() < 1e-12);
        // Sum of squared deviations of {1,2,3,4} about 2.5 is 5; 5/3 is the variance.
        let got = sample_sd(&series(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert!((got - (5.0_f64 / 3.0).sqrt()).abs() < 1e-12, "got {got}");
    }

    #[test]
    fn sample_sd_needs_two_samples() {
        assert!(sample_sd(&series(&[1.0])).is_err());
    }

    #[test]
    fn ar1_of_alternating_signs_is_strongly_negative() {
        let s = series(&[1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0]);
        let rho = ar1_coeff(&s).unwrap();
        assert!((rho - (-0.875)).abs() < 1e-12, "got {rho}");
    }

    #[test]
    fn ar1_of_short_irregular_series() {
        // {1,2,4}: mean 7/3; cross products sum to -1/9, squares to 42/9.
        let rho = ar1_coeff(&series(&[1.0, 2.0, 4.0])).unwrap();
        assert!((rho - (-1.0 / 42.0)).abs() < 1e-12, "got {rho}");
    }

    #[test]
    fn ar1_distinguishes_too_short_from_constant() {
        match ar1_coeff(&series(&[1.0, 2.0])) {
            Err(Error::InvalidInput(_)) => {}
            other => panic!("expected InvalidInput, got {other:?}"),
        }
        match ar1_coeff(&series(&[5.0, 5.0, 5.0])) {
            Err(Error::Degenerate(_)) => {}
            other => panic!("expected Degenerate, got {other:?}"),
        }
    }

    #[test]
    fn detrend_matches_normal_equations_oracle() {
        // Independent oracle: solve the 2x2 normal equations for y = a + b*t
        // directly and subtract the fitted line.
        let y = [0.0, 1.0, 0.0, 1.0];
        let n = y.len() as f64;
        let (mut st, mut stt, mut sy, mut sty) = (0.0, 0.0, 0.0, 0.0);
        for (t, &v) in y.iter().enumerate() {
            let tf = t as f64;
            st += tf;
            stt += tf * tf;
            sy += v;
            sty += tf * v;
        }
        let det = n * stt - st * st;
        let a = (stt * sy - st * sty) / det;
        let b = (n * sty - st * sy) / det;
        let expect: Vec<f64> = y
            .iter()
            .enumerate()
            .map(|(t, &v)| v - a - b * t as f64)
            .collect();

        let got = detrend_linear(&series(&y)).unwrap();
        for (g, e) in got.values().iter().zip(&expect) {
            assert!((g - e).abs() < 1e-12, "got {g}, expected {e}");
        }
        // Frozen values from the same fit worked by hand: intercept 0.2, slope 0.2.
        let frozen = [-0.2, 0.6, -0.6, 0.2];
        for (g, e) in got.values().iter().zip(&frozen) {
            assert!((g - e).abs() < 1e-12, "got {g}, expected {e}");
        }
    }

    #[test]
    fn detrend_residuals_are_orthogonal_to_line() {
        let s = series(&[3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0]);
        let r = detrend_linear(&s).unwrap();
        let sum: f64 = r.values().iter().sum();
        let tsum: f64 = r.values().iter().enumerate().map(|(t, v)| t as f64 * v).sum();
        assert!(sum.abs() < 1e-10, "residual sum {sum}");
        assert!(tsum.abs() < 1e-10, "residual index moment {tsum}");
    }

    #[test]
    fn detrend_of_exact_line_is_zero() {
        let s = series(&[5.0, 7.0, 9.0, 11.0]);
        for v in detrend_linear(&s).unwrap().values() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn diff_variance_hand_values() {
        assert_eq!(diff_variance_predicted(2.0, 0.5).unwrap(), 4.0);
        assert_eq!(diff_variance_predicted(1.0, 0.0).unwrap(), 2.0);
        assert_eq!(diff_variance_predicted(3.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn diff_variance_rejects_bad_parameters() {
        assert!(diff_variance_predicted(-1.0, 0.0).is_err());
        assert!(diff_variance_predicted(1.0, 1.5).is_err());
        assert!(diff_variance_predicted(f64::NAN, 0.0).is_err());
    }
}
