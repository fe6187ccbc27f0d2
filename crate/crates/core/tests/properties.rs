//! Randomized invariant checks for the statistical kernels, the metric
//! itself, flagging, and report serialization.

use proptest::prelude::*;

use dvars::flag::{flag_outliers, FlagPolicy};
use dvars::metrics::dvars;
use dvars::report::{
    parse_json_report, render_report, FrameRecord, QcReport, ReportFormat, ReportMeta,
    ReportSummary,
};
use dvars::stats::{ar1_coeff, detrend_linear, quantile, robust_sd_iqr, Series};
use dvars::volume::{Mask, TimeSeriesVolume};

fn series(values: Vec<f64>) -> Series {
    Series::new(values).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + b.abs())
}

prop_compose! {
    fn arb_values(min_len: usize)(values in prop::collection::vec(-100.0f64..100.0, min_len..24)) -> Vec<f64> {
        values
    }
}

prop_compose! {
    /// A small volume plus its frame count: voxels * frames values.
    fn arb_volume()(voxels in 1usize..12, frames in 2usize..10)
        (values in prop::collection::vec(-100.0f64..100.0, voxels * frames),
         voxels in Just(voxels), frames in Just(frames))
        -> TimeSeriesVolume
    {
        TimeSeriesVolume::new((voxels, 1, 1), frames, values).unwrap()
    }
}

proptest! {
    #[test]
    fn quantile_is_monotone_in_p(values in arb_values(1), p1 in 0.0f64..=1.0, p2 in 0.0f64..=1.0) {
        let s = series(values);
        let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
        prop_assert!(quantile(&s, lo).unwrap() <= quantile(&s, hi).unwrap());
    }

    #[test]
    fn quantile_commutes_with_affine_maps(
        values in arb_values(1),
        p in 0.0f64..=1.0,
        a in 0.1f64..100.0,
        b in -1000.0f64..1000.0,
    ) {
        let q = quantile(&series(values.clone()), p).unwrap();
        let mapped = series(values.iter().map(|v| a * v + b).collect());
        prop_assert!(close(quantile(&mapped, p).unwrap(), a * q + b, 1e-9));
    }

    #[test]
    fn robust_scale_is_scale_equivariant(values in arb_values(2), c in 0.01f64..100.0) {
        let base = robust_sd_iqr(&series(values.clone())).unwrap();
        let scaled = robust_sd_iqr(&series(values.iter().map(|v| c * v).collect())).unwrap();
        prop_assert!(close(scaled, c * base, 1e-9));
    }

    #[test]
    fn lag_correlation_ignores_affine_maps(
        values in arb_values(3),
        a in 0.1f64..100.0,
        neg in any::<bool>(),
        b in -1000.0f64..1000.0,
    ) {
        let spread = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - values.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 1e-3);
        let a = if neg { -a } else { a };
        let base = ar1_coeff(&series(values.clone())).unwrap();
        let mapped = ar1_coeff(&series(values.iter().map(|v| a * v + b).collect())).unwrap();
        prop_assert!((base - mapped).abs() < 1e-6);
        prop_assert!((-1.0..=1.0).contains(&base));
    }

    #[test]
    fn detrending_is_idempotent(values in arb_values(2)) {
        let once = detrend_linear(&series(values)).unwrap();
        let twice = detrend_linear(&once).unwrap();
        for (a, b) in twice.values().iter().zip(once.values()) {
            prop_assert!(close(*a, *b, 1e-9));
        }
    }

    #[test]
    fn metric_ignores_per_voxel_offsets(
        volume in arb_volume(),
        offsets in prop::collection::vec(-1000.0f64..1000.0, 12),
    ) {
        let frames = volume.frames();
        let shifted: Vec<f64> = volume
            .values()
            .iter()
            .enumerate()
            .map(|(k, &v)| v + offsets[k / frames % offsets.len()])
            .collect();
        let shifted = TimeSeriesVolume::new(volume.dims(), frames, shifted).unwrap();
        let mask = Mask::all(volume.dims()).unwrap();
        let a = dvars(&volume, &mask).unwrap();
        let b = dvars(&shifted, &mask).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!(close(*x, *y, 1e-9));
        }
    }

    #[test]
    fn metric_scales_with_the_data(volume in arb_volume(), c in 0.01f64..100.0) {
        let scaled: Vec<f64> = volume.values().iter().map(|v| c * v).collect();
        let scaled = TimeSeriesVolume::new(volume.dims(), volume.frames(), scaled).unwrap();
        let mask = Mask::all(volume.dims()).unwrap();
        let a = dvars(&volume, &mask).unwrap();
        let b = dvars(&scaled, &mask).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!(close(*y, c * x, 1e-9));
        }
    }

    #[test]
    fn metric_is_symmetric_under_time_reversal(volume in arb_volume()) {
        let frames = volume.frames();
        let voxels = volume.voxel_count();
        let mut reversed = vec![0.0; voxels * frames];
        for i in 0..voxels {
            for t in 0..frames {
                reversed[i * frames + t] = volume.values()[i * frames + (frames - 1 - t)];
            }
        }
        let reversed = TimeSeriesVolume::new(volume.dims(), frames, reversed).unwrap();
        let mask = Mask::all(volume.dims()).unwrap();
        let forward = dvars(&volume, &mask).unwrap();
        let backward = dvars(&reversed, &mask).unwrap();
        let n = forward.len();
        for (k, x) in forward.values().iter().enumerate() {
            prop_assert!(close(*x, backward.values()[n - 1 - k], 1e-12));
        }
    }

    #[test]
    fn flags_survive_rescaling(volume in arb_volume(), c in 0.01f64..100.0, z in 1.0f64..8.0) {
        let mask = Mask::all(volume.dims()).unwrap();
        let base = dvars(&volume, &mask).unwrap();
        let scaled: Vec<f64> = volume.values().iter().map(|v| c * v).collect();
        let scaled = TimeSeriesVolume::new(volume.dims(), volume.frames(), scaled).unwrap();
        let scaled = dvars(&scaled, &mask).unwrap();
        let policy = FlagPolicy::RobustZ { z };
        let a = flag_outliers(&base, &policy);
        let b = flag_outliers(&scaled, &policy);
        // The deviation/spread ratio is scale-free, so flags agree whenever
        // the spread is nonzero; the degenerate-spread fallback is absolute
        // and exempt.
        if a.warning.is_none() && b.warning.is_none() {
            prop_assert_eq!(a.flags, b.flags);
        }
    }

    #[test]
    fn json_reports_round_trip(
        input in "[a-zA-Z0-9_./ -]{0,24}",
        warnings in prop::collection::vec("[a-z ]{0,16}", 0..3),
        rows in prop::collection::vec(
            (0.0f64..10.0, prop::option::of(0.5f64..2.0), prop::option::of(0.5f64..2.0), any::<bool>()),
            1..8,
        ),
        robust in any::<bool>(),
        dropped in 0usize..5,
    ) {
        let frames: Vec<FrameRecord> = rows
            .iter()
            .enumerate()
            .map(|(k, (d, s, ss, f))| FrameRecord {
                frame: k + 2,
                dvars: *d,
                dvars_star: *s,
                dvars_star_star: *ss,
                flag: u8::from(*f),
            })
            .collect();
        let report = QcReport {
            meta: ReportMeta {
                tool: "dvars".into(),
                version: "0.0.0".into(),
                input,
                mask: "all".into(),
                robust_sigma: robust,
                detrend: false,
                flag_policy: "zrobust=5".into(),
                voxels_total: 10,
                voxels_used: 10 - dropped,
                frames: frames.len() + 1,
                warnings,
                notes: vec![],
            },
            summary: ReportSummary {
                dvars_mean: 1.0,
                dvars_median: 1.0,
                dvars_star_mean: None,
                dvars_star_median: None,
                dvars_star_star_mean: None,
                dvars_star_star_median: None,
                dropped_voxels: dropped,
                excluded_voxels: 0,
                flagged_frames: frames.iter().filter(|r| r.flag == 1).count(),
            },
            frames,
        };
        let text = render_report(&report, ReportFormat::Json);
        prop_assert_eq!(parse_json_report(&text).unwrap(), report);
    }

    #[test]
    fn tsv_numbers_carry_six_significant_digits(value in 1e-8f64..1e8) {
        let report = QcReport {
            meta: ReportMeta {
                tool: "dvars".into(),
                version: "0.0.0".into(),
                input: "x".into(),
                mask: "all".into(),
                robust_sigma: true,
                detrend: false,
                flag_policy: "none".into(),
                voxels_total: 1,
                voxels_used: 1,
                frames: 2,
                warnings: vec![],
                notes: vec![],
            },
            summary: ReportSummary {
                dvars_mean: value,
                dvars_median: value,
                dvars_star_mean: None,
                dvars_star_median: None,
                dvars_star_star_mean: None,
                dvars_star_star_median: None,
                dropped_voxels: 0,
                excluded_voxels: 0,
                flagged_frames: 0,
            },
            frames: vec![FrameRecord {
                frame: 2,
                dvars: value,
                dvars_star: None,
                dvars_star_star: None,
                flag: 0,
            }],
        };
        let text = render_report(&report, ReportFormat::Tsv);
        let row = text
            .lines()
            .find(|l| l.starts_with("2\t"))
            .expect("frame row");
        let printed: f64 = row.split('\t').nth(1).unwrap().parse().unwrap();
        prop_assert!(close(printed, value, 5e-6), "printed {printed}, true {value}");
    }
}
