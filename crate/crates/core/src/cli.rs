//! Command-line interface: argument definitions and the runners behind
//! the `compute`, `simulate`, and `selftest` subcommands.

use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::flag::FlagPolicy;
use crate::metrics::EstimatorOptions;
use crate::nifti::{load_nifti, write_nifti};
use crate::pipeline::{compute_report, ComputeOptions, FlagPolicyOption, MaskSource, VariantSet};
use crate::report::{render_report, ReportFormat};
use crate::selftest::{run_selftest, SelftestOptions};
use crate::simulate::{load_spec, simulate_ar1_volume};
use crate::tsv::load_tsv_matrix;
use crate::volume::{MaskStrategy, TimeSeriesVolume};

/// Quality-control metrics for 4D volumetric time series.
#[derive(Debug, Parser)]
#[command(name = "dvars", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute framewise signal-change metrics for a 4D image or matrix.
    Compute(ComputeArgs),
    /// Generate a synthetic 4D volume with known noise parameters.
    Simulate(SimulateArgs),
    /// Run the built-in verification suite.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args)]
pub struct ComputeArgs {
    /// Input volume: NIfTI-1 (.nii, .nii.gz, .hdr) or a voxels-by-frames text matrix.
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,

    /// Binary mask volume selecting the voxels to analyze.
    #[arg(long, value_name = "PATH", conflicts_with = "mask_strategy")]
    pub mask: Option<PathBuf>,

    /// Automatic mask rule: all, nonzero-mean, mean-frac=F, or nonconstant.
    #[arg(long, value_name = "RULE", default_value = "mean-frac=0.1")]
    pub mask_strategy: MaskStrategy,

    /// Estimate voxel noise scale robustly (quartile-based) instead of by
    /// the plain standard deviation.
    #[arg(long, value_name = "on|off", default_value = "on")]
    pub robust_sigma: OnOff,

    /// Remove a per-voxel linear trend before estimating noise parameters.
    #[arg(long, value_name = "on|off", default_value = "off")]
    pub detrend: OnOff,

    /// Comma-separated list of series to report: raw, star, starstar.
    #[arg(long, value_name = "LIST", default_value = "raw,star,starstar")]
    pub variants: String,

    /// Frame flagging rule: abs=T, zrobust=Z, or none.
    #[arg(long, value_name = "RULE", default_value = "zrobust=5")]
    pub flag: FlagPolicy,

    /// Where to write the report; "-" means standard output.
    #[arg(long, value_name = "PATH", default_value = "-")]
    pub output: PathBuf,

    /// Report format: tsv or json.
    #[arg(long, value_name = "FMT", default_value = "tsv")]
    pub format: ReportFormat,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// TOML description of the scenario to generate.
    #[arg(long, value_name = "PATH")]
    pub spec: PathBuf,

    /// Override the seed given in the scenario file.
    #[arg(long, value_name = "SEED")]
    pub seed: Option<u64>,

    /// Output volume path (.nii or .nii.gz); a sidecar with the true
    /// per-voxel parameters is written next to it.
    #[arg(long, value_name = "PATH")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    /// Fault-injection factor for the calibration checks; used by the test
    /// suite to prove the selftest can fail.
    #[arg(long, value_name = "FACTOR", default_value_t = 1.0, hide = true)]
    pub perturb_null_scale: f64,
}

/// Boolean flag spelled on/off, matching the conventions of the ecosystem
/// this tool sits in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OnOff {
    On,
    Off,
}

impl OnOff {
    pub fn is_on(self) -> bool {
        matches!(self, OnOff::On)
    }
}

impl std::str::FromStr for OnOff {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "on" | "true" | "yes" | "1" => Ok(OnOff::On),
            "off" | "false" | "no" | "0" => Ok(OnOff::Off),
            other => Err(format!("expected on or off, got '{other}'")),
        }
    }
}

fn parse_variants(list: &str) -> Result<VariantSet> {
    let mut set = VariantSet {
        star: false,
        star_star: false,
    };
    let mut any_raw = false;
    for item in list.split(',') {
        match item.trim() {
            "raw" => any_raw = true,
            "star" => set.star = true,
            "starstar" => set.star_star = true,
            "" => {}
            other => {
                return Err(Error::Config(format!(
                    "unknown variant '{other}'; expected raw, star, or starstar"
                )))
            }
        }
    }
    if !any_raw && !set.star && !set.star_star {
        return Err(Error::Config("no variants requested".into()));
    }
    Ok(set)
}

/// Loads the input as NIfTI or a text matrix, deciding by extension first
/// and by content when the extension is unfamiliar.
pub fn load_input(path: &Path) -> Result<TimeSeriesVolume> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default();
    if name.ends_with(".nii") || name.ends_with(".nii.gz") || name.ends_with(".hdr") || name.ends_with(".hdr.gz") {
        return load_nifti(path);
    }
    if name.ends_with(".tsv") || name.ends_with(".csv") || name.ends_with(".txt") {
        return load_tsv_matrix(path);
    }
    // Unknown extension: sniff. Gzip or a 348-byte header tag means NIfTI.
    let mut head = [0u8; 4];
    let n = fs::File::open(path)
        .and_then(|mut f| f.read(&mut head))
        .map_err(|e| Error::io(path, e))?;
    let looks_nifti = (n >= 2 && head[0] == 0x1f && head[1] == 0x8b)
        || (n >= 4 && (head == [92, 1, 0, 0] || head == [0, 0, 1, 92]));
    if looks_nifti {
        load_nifti(path)
    } else {
        load_tsv_matrix(path)
    }
}

/// Runs `compute`; returns the process exit code.
pub fn run_compute(args: &ComputeArgs) -> Result<i32> {
    let volume = load_input(&args.input)?;
    let options = ComputeOptions {
        mask: match &args.mask {
            Some(path) => MaskSource::File(path.clone()),
            None => MaskSource::Strategy(args.mask_strategy),
        },
        estimator: EstimatorOptions {
            robust_sigma: args.robust_sigma.is_on(),
            detrend: args.detrend.is_on(),
        },
        variants: parse_variants(&args.variants)?,
        flag_policy: FlagPolicyOption(args.flag),
    };
    let report = compute_report(&volume, &args.input.to_string_lossy(), &options)?;
    for warning in &report.meta.warnings {
        eprintln!("dvars: warning: {warning}");
    }
    let rendered = render_report(&report, args.format);
    if args.output == Path::new("-") {
        print!("{rendered}");
    } else {
        fs::write(&args.output, rendered).map_err(|e| Error::io(args.output.clone(), e))?;
    }
    Ok(if report.summary.flagged_frames > 0 { 2 } else { 0 })
}

/// Runs `simulate`; returns the process exit code.
pub fn run_simulate(args: &SimulateArgs) -> Result<i32> {
    let mut spec = load_spec(&args.spec)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let sim = simulate_ar1_volume(&spec)?;
    write_nifti(&args.output, &sim.volume)?;

    let mut sidecar = String::from("voxel\tsigma\trho\tdiff_var\n");
    for (k, &voxel) in sim.params.voxel_indices().iter().enumerate() {
        writeln!(
            sidecar,
            "{voxel}\t{}\t{}\t{}",
            sim.params.sigma()[k],
            sim.params.rho()[k],
            sim.params.diff_var()[k]
        )
        .expect("string write");
    }
    let sidecar_path = PathBuf::from(format!("{}.params.tsv", args.output.display()));
    fs::write(&sidecar_path, sidecar).map_err(|e| Error::io(sidecar_path.clone(), e))?;

    let (nx, ny, nz) = sim.volume.dims();
    eprintln!(
        "dvars: simulated {nx}x{ny}x{nz}x{} volume (seed {}) -> {}",
        sim.volume.frames(),
        spec.seed,
        args.output.display()
    );
    eprintln!("dvars: true parameters -> {}", sidecar_path.display());
    Ok(0)
}

/// Runs `selftest`; returns the process exit code.
pub fn run_selftest_cmd(args: &SelftestArgs) -> Result<i32> {
    if !(args.perturb_null_scale.is_finite() && args.perturb_null_scale > 0.0) {
        return Err(Error::Config(
            "perturbation factor must be finite and positive".into(),
        ));
    }
    let results = run_selftest(&SelftestOptions {
        perturb_null_scale: args.perturb_null_scale,
    });
    let mut passed = 0;
    for check in &results {
        if check.passed {
            passed += 1;
            println!("selftest: {} ... ok", check.name);
        } else {
            println!("selftest: {} ... FAIL ({})", check.name, check.detail);
        }
    }
    println!("selftest: {passed}/{} checks passed", results.len());
    Ok(if passed == results.len() { 0 } else { 1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_on_off_parses_common_spellings() {
        assert_eq!("on".parse::<OnOff>().unwrap(), OnOff::On);
        assert_eq!("off".parse::<OnOff>().unwrap(), OnOff::Off);
        assert_eq!("1".parse::<OnOff>().unwrap(), OnOff::On);
        assert!("maybe".parse::<OnOff>().is_err());
    }

    #[test]
    fn unit_variant_list_parses() {
        let set = parse_variants("raw,star,starstar").unwrap();
        assert!(set.star && set.star_star);
        let set = parse_variants("raw").unwrap();
        assert!(!set.star && !set.star_star);
        assert!(parse_variants("raw,bogus").is_err());
        assert!(parse_variants("").is_err());
    }

    #[test]
    fn unit_cli_parses_compute_flags() {
        let cli = Cli::try_parse_from([
            "dvars",
            "compute",
            "--input",
            "x.nii",
            "--detrend",
            "on",
            "--flag",
            "abs=1.5",
            "--format",
            "json",
        ])
        .unwrap();
        match cli.command {
            Command::Compute(args) => {
                assert!(args.detrend.is_on());
                assert_eq!(args.flag, FlagPolicy::Absolute { threshold: 1.5 });
                assert_eq!(args.format, ReportFormat::Json);
            }
            _ => panic!("wrong subcommand"),
        }
    }

    #[test]
    fn unit_mask_conflicts_with_strategy() {
        let err = Cli::try_parse_from([
            "dvars",
            "compute",
            "--input",
            "x.nii",
            "--mask",
            "m.nii",
            "--mask-strategy",
            "all",
        ]);
        assert!(err.is_err());
    }
}
