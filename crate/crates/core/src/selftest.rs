//! Built-in verification: reduced-scale versions of the calibration,
//! invariance, robustness, detection, and determinism checks, runnable on
//! any install via `dvars selftest`.

use rayon::ThreadPoolBuilder;

use crate::flag::{flag_outliers, FlagPolicy};
use crate::metrics::{
    dvars, dvars_standardized, dvars_voxel_standardized, estimate_noise_params, EstimatorOptions,
};
use crate::pipeline::{compute_report, ComputeOptions, MaskSource};
use crate::report::{render_report, ReportFormat};
use crate::simulate::{simulate_ar1_volume, ParamDraw, SimulationSpec, SpikeSpec};
use crate::stats::{robust_sd_iqr, sample_sd, Series};
use crate::volume::{Mask, MaskStrategy, TimeSeriesVolume};

/// Selftest switches.
#[derive(Debug, Clone, Copy)]
pub struct SelftestOptions {
    /// Multiplies the expected-square denominator in the calibration checks.
    /// 1.0 is a bitwise no-op; anything else is a deliberate fault injection
    /// proving the suite can fail.
    pub perturb_null_scale: f64,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        SelftestOptions {
            perturb_null_scale: 1.0,
        }
    }
}

/// Outcome of one check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        CheckResult {
            name,
            passed,
            detail,
        }
    }
}

/// Runs every check and returns the results in a fixed order.
pub fn run_selftest(options: &SelftestOptions) -> Vec<CheckResult> {
    let f = options.perturb_null_scale;
    vec![
        check_star_estimated(f),
        check_star_true(f),
        check_starstar_true(f),
        check_mu_cancellation(),
        check_scale_invariance(),
        check_hand_oracle(),
        check_diff_variance_law(),
        check_robust_contamination(),
        check_spike_detection(),
        check_determinism(),
    ]
}

/// The standard null scenario at reduced scale.
fn null_spec(voxels: usize, frames: usize, seed: u64) -> SimulationSpec {
    SimulationSpec {
        dims: (voxels, 1, 1),
        frames,
        seed,
        mu: ParamDraw::Uniform(500.0, 1500.0),
        sigma: ParamDraw::Uniform(5.0, 20.0),
        rho: ParamDraw::Uniform(0.0, 0.5),
        ..SimulationSpec::null((voxels, 1, 1), frames)
    }
}

/// Applies the denominator perturbation; 1.0 leaves values bit-identical.
fn perturbed(values: &[f64], factor: f64) -> Vec<f64> {
    let scale = factor.sqrt();
    values.iter().map(|v| v / scale).collect()
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn mean_square(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64
}

fn check_star_estimated(factor: f64) -> CheckResult {
    let mut means = Vec::new();
    let mut ok = true;
    for seed in [1, 2, 3] {
        let sim = simulate_ar1_volume(&null_spec(1500, 300, seed)).unwrap();
        let mask = Mask::all(sim.volume.dims()).unwrap();
        let params =
            estimate_noise_params(&sim.volume, &mask, EstimatorOptions::default()).unwrap();
        let star = dvars_standardized(&sim.volume, &mask, &params).unwrap();
        let m = mean(&perturbed(star.values(), factor));
        ok &= (0.95..=1.05).contains(&m);
        means.push(format!("{m:.4}"));
    }
    CheckResult::new(
        "null-calibration-star-estimated",
        ok,
        format!(
            "time-mean with estimated parameters per seed: {} (required within [0.95, 1.05])",
            means.join(", ")
        ),
    )
}

fn check_star_true(factor: f64) -> CheckResult {
    let mut means = Vec::new();
    let mut ok = true;
    for seed in [1, 2, 3] {
        let sim = simulate_ar1_volume(&null_spec(1500, 300, seed)).unwrap();
        let mask = Mask::all(sim.volume.dims()).unwrap();
        let star = dvars_standardized(&sim.volume, &mask, &sim.params).unwrap();
        let m = mean_square(&perturbed(star.values(), factor));
        ok &= (0.97..=1.03).contains(&m);
        means.push(format!("{m:.4}"));
    }
    CheckResult::new(
        "null-calibration-star-true",
        ok,
        format!(
            "mean squared value with true parameters per seed: {} (required within [0.97, 1.03])",
            means.join(", ")
        ),
    )
}

fn check_starstar_true(factor: f64) -> CheckResult {
    let mut means = Vec::new();
    let mut ok = true;
    for seed in [1, 2, 3] {
        let sim = simulate_ar1_volume(&null_spec(1500, 300, seed)).unwrap();
        let mask = Mask::all(sim.volume.dims()).unwrap();
        let out = dvars_voxel_standardized(&sim.volume, &mask, &sim.params).unwrap();
        let m = mean_square(&perturbed(out.series.values(), factor));
        ok &= (0.97..=1.03).contains(&m);
        means.push(format!("{m:.4}"));
    }
    CheckResult::new(
        "null-calibration-starstar-true",
        ok,
        format!(
            "mean squared voxelwise value with true parameters per seed: {} (required within [0.97, 1.03])",
            means.join(", ")
        ),
    )
}

fn check_mu_cancellation() -> CheckResult {
    let spec = SimulationSpec {
        mu: ParamDraw::Const(0.0),
        ..null_spec(200, 50, 7)
    };
    let sim = simulate_ar1_volume(&spec).unwrap();
    let frames = sim.volume.frames();
    let shifted_values: Vec<f64> = sim
        .volume
        .values()
        .iter()
        .enumerate()
        .map(|(k, &v)| v + 700.0 + 3.0 * (k / frames) as f64)
        .collect();
    let shifted = TimeSeriesVolume::new(sim.volume.dims(), frames, shifted_values).unwrap();
    let mask = Mask::all(sim.volume.dims()).unwrap();
    let a = dvars(&sim.volume, &mask).unwrap();
    let b = dvars(&shifted, &mask).unwrap();
    let worst = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y).abs() / x.abs().max(f64::MIN_POSITIVE))
        .fold(0.0f64, f64::max);
    CheckResult::new(
        "mean-offset-cancellation",
        worst < 1e-10,
        format!("worst relative change under per-voxel offsets: {worst:.2e} (required < 1e-10)"),
    )
}

fn check_scale_invariance() -> CheckResult {
    let sim = simulate_ar1_volume(&null_spec(200, 60, 9)).unwrap();
    let mask = Mask::all(sim.volume.dims()).unwrap();
    let base_params =
        estimate_noise_params(&sim.volume, &mask, EstimatorOptions::default()).unwrap();
    let base_raw = dvars(&sim.volume, &mask).unwrap();
    let base_star = dvars_standardized(&sim.volume, &mask, &base_params).unwrap();
    let base_ss = dvars_voxel_standardized(&sim.volume, &mask, &base_params).unwrap();

    let mut worst_star = 0.0f64;
    let mut worst_raw = 0.0f64;
    for c in [0.01, 1000.0] {
        let scaled_values: Vec<f64> = sim.volume.values().iter().map(|v| v * c).collect();
        let scaled =
            TimeSeriesVolume::new(sim.volume.dims(), sim.volume.frames(), scaled_values).unwrap();
        let params = estimate_noise_params(&scaled, &mask, EstimatorOptions::default()).unwrap();
        let raw = dvars(&scaled, &mask).unwrap();
        let star = dvars_standardized(&scaled, &mask, &params).unwrap();
        let ss = dvars_voxel_standardized(&scaled, &mask, &params).unwrap();
        for (x, y) in star.values().iter().zip(base_star.values()) {
            worst_star = worst_star.max((x - y).abs() / y.abs());
        }
        for (x, y) in ss.series.values().iter().zip(base_ss.series.values()) {
            worst_star = worst_star.max((x - y).abs() / y.abs());
        }
        for (x, y) in raw.values().iter().zip(base_raw.values()) {
            worst_raw = worst_raw.max((x - c * y).abs() / (c * y).abs());
        }
    }
    CheckResult::new(
        "scale-invariance",
        worst_star < 1e-6 && worst_raw < 1e-12,
        format!(
            "standardized drift {worst_star:.2e} (required < 1e-6), raw scaling error {worst_raw:.2e} (required < 1e-12)"
        ),
    )
}

fn check_hand_oracle() -> CheckResult {
    let v = TimeSeriesVolume::new((2, 1, 1), 3, vec![1.0, 3.0, 2.0, 2.0, 2.0, 4.0]).unwrap();
    let s = dvars(&v, &Mask::all(v.dims()).unwrap()).unwrap();
    let e0 = (s.values()[0] - 2.0_f64.sqrt()).abs();
    let e1 = (s.values()[1] - 2.5_f64.sqrt()).abs();
    CheckResult::new(
        "hand-oracle",
        e0 < 1e-12 && e1 < 1e-12,
        format!("two-voxel fixture errors {e0:.2e}, {e1:.2e} (required < 1e-12)"),
    )
}

fn check_diff_variance_law() -> CheckResult {
    let mut ok = true;
    let mut worst = 0.0f64;
    for (k, &(sigma, rho)) in [(1.0, 0.0), (1.0, 0.3), (1.0, 0.7), (10.0, 0.0), (10.0, 0.3), (10.0, 0.7)]
        .iter()
        .enumerate()
    {
        let spec = SimulationSpec {
            dims: (1, 1, 1),
            frames: 50_000,
            seed: 100 + k as u64,
            mu: ParamDraw::Const(0.0),
            sigma: ParamDraw::Const(sigma),
            rho: ParamDraw::Const(rho),
            ..SimulationSpec::null((1, 1, 1), 2)
        };
        let sim = simulate_ar1_volume(&spec).unwrap();
        let diffs: Vec<f64> = sim.volume.trace(0).windows(2).map(|w| w[1] - w[0]).collect();
        let sd = sample_sd(&Series::new(diffs).unwrap()).unwrap();
        let predicted = crate::stats::diff_variance_predicted(sigma, rho).unwrap();
        let err = ((sd * sd) / predicted - 1.0).abs();
        worst = worst.max(err);
        ok &= err < 0.05;
    }
    CheckResult::new(
        "difference-variance-law",
        ok,
        format!("worst relative deviation over the (sigma, rho) grid: {worst:.4} (required < 0.05)"),
    )
}

fn check_robust_contamination() -> CheckResult {
    let spec = SimulationSpec {
        dims: (1, 1, 1),
        frames: 2000,
        seed: 21,
        mu: ParamDraw::Const(0.0),
        sigma: ParamDraw::Const(1.0),
        rho: ParamDraw::Const(0.0),
        ..SimulationSpec::null((1, 1, 1), 2)
    };
    let sim = simulate_ar1_volume(&spec).unwrap();
    let clean = sim.volume.trace(0).to_vec();
    let mut contaminated = clean.clone();
    // 5% of frames, evenly spaced, blown up tenfold.
    let mut t = 10;
    while t < contaminated.len() {
        contaminated[t] *= 10.0;
        t += 20;
    }
    let clean_series = Series::new(clean).unwrap();
    let dirty_series = Series::new(contaminated).unwrap();

    let robust_clean = robust_sd_iqr(&clean_series).unwrap();
    let robust_dirty = robust_sd_iqr(&dirty_series).unwrap();
    let sd_clean = sample_sd(&clean_series).unwrap();
    let sd_dirty = sample_sd(&dirty_series).unwrap();

    let ok = (robust_dirty - 1.0).abs() < 0.10
        && (sd_dirty - 1.0).abs() > 0.50
        && (robust_clean - 1.0).abs() < 0.05
        && (sd_clean - 1.0).abs() < 0.05;
    CheckResult::new(
        "robust-sigma-contamination",
        ok,
        format!(
            "under 5% tenfold contamination: robust {robust_dirty:.3} (required within 10% of 1), \
             plain {sd_dirty:.3} (required off by > 50%); clean: robust {robust_clean:.3}, plain {sd_clean:.3} (required within 5%)"
        ),
    )
}

fn check_spike_detection() -> CheckResult {
    let mut ok = true;
    let mut details = Vec::new();
    for seed in [1, 2, 3, 4, 5] {
        let mut spec = null_spec(1500, 300, seed);
        spec.spikes.push(SpikeSpec {
            frame: 150,
            factor: 2.0,
        });
        let sim = simulate_ar1_volume(&spec).unwrap();
        let mask = Mask::all(sim.volume.dims()).unwrap();
        let params =
            estimate_noise_params(&sim.volume, &mask, EstimatorOptions::default()).unwrap();
        let star = dvars_standardized(&sim.volume, &mask, &params).unwrap();
        let outcome = flag_outliers(&star, &FlagPolicy::RobustZ { z: 5.0 });
        let flagged: Vec<usize> = outcome
            .flags
            .iter()
            .enumerate()
            .filter_map(|(k, f)| f.then_some(k + 2))
            .collect();
        let hit = flagged == vec![150, 151];
        ok &= hit;
        details.push(format!(
            "seed {seed}: flagged frames {flagged:?}{}",
            if hit { "" } else { " (expected [150, 151])" }
        ));
    }
    CheckResult::new(
        "spike-detection",
        ok,
        format!(
            "spike at frame 150 must flag exactly frames 150 and 151: {}",
            details.join("; ")
        ),
    )
}

fn check_determinism() -> CheckResult {
    let spec = null_spec(500, 100, 12);
    let run = |threads: usize| {
        let pool = ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            let sim = simulate_ar1_volume(&spec).unwrap();
            let report = compute_report(
                &sim.volume,
                "selftest://determinism",
                &ComputeOptions {
                    mask: MaskSource::Strategy(MaskStrategy::All),
                    ..ComputeOptions::default()
                },
            )
            .unwrap();
            (
                render_report(&report, ReportFormat::Tsv),
                render_report(&report, ReportFormat::Json),
            )
        })
    };
    let (tsv1, json1) = run(1);
    let (tsv4, json4) = run(4);
    let (tsv1b, json1b) = run(1);
    let ok = tsv1 == tsv4 && json1 == json4 && tsv1 == tsv1b && json1 == json1b;
    CheckResult::new(
        "determinism-threads",
        ok,
        format!(
            "reports byte-identical across 1 and 4 workers and across repeats: {}",
            if ok { "yes" } else { "NO" }
        ),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_perturbation_is_bitwise_identity() {
        let values = [0.1, 1.0, 2.5, 1e-300];
        let out = perturbed(&values, 1.0);
        for (a, b) in values.iter().zip(&out) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn perturbed_denominator_fails_the_calibration_check() {
        let result = check_star_true(1.2);
        assert!(!result.passed, "{}", result.detail);
    }

    #[test]
    fn hand_oracle_check_passes() {
        let result = check_hand_oracle();
        assert!(result.passed, "{}", result.detail);
    }
}
