//! Synthetic AR(1) volumes with known per-voxel parameters, plus artifact
//! injection (noise spikes, linear drift) for calibration and self-checks.
//!
//! Every voxel draws from its own counter-derived RNG substream, so output
//! is identical for a given seed regardless of thread count or voxel order.

use std::fs;
use std::path::Path;

use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::metrics::{EstimatorOptions, VoxelNoiseParams};
use crate::volume::TimeSeriesVolume;

/// A scalar that is either fixed or drawn uniformly per voxel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamDraw {
    Const(f64),
    Uniform(f64, f64),
}

impl ParamDraw {
    fn lo(&self) -> f64 {
        match *self {
            ParamDraw::Const(v) => v,
            ParamDraw::Uniform(lo, _) => lo,
        }
    }

    fn hi(&self) -> f64 {
        match *self {
            ParamDraw::Const(v) => v,
            ParamDraw::Uniform(_, hi) => hi,
        }
    }
}

/// One extra-noise burst: frame `frame` (1-based) of every voxel gets an
/// additive draw from `N(0, (factor * sigma_i)^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpikeSpec {
    pub frame: usize,
    pub factor: f64,
}

/// Everything needed to generate a synthetic scan.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSpec {
    pub dims: (usize, usize, usize),
    pub frames: usize,
    pub seed: u64,
    pub mu: ParamDraw,
    pub sigma: ParamDraw,
    pub rho: ParamDraw,
    pub tr: Option<f64>,
    pub voxel_mm: Option<[f64; 3]>,
    /// Applied in order after generation, before `drift`.
    pub spikes: Vec<SpikeSpec>,
    pub drift: Option<f64>,
}

impl SimulationSpec {
    /// A plain null spec: no artifacts, no metadata, seed 0.
    pub fn null(dims: (usize, usize, usize), frames: usize) -> Self {
        SimulationSpec {
            dims,
            frames,
            seed: 0,
            mu: ParamDraw::Const(0.0),
            sigma: ParamDraw::Const(1.0),
            rho: ParamDraw::Const(0.0),
            tr: None,
            voxel_mm: None,
            spikes: Vec::new(),
            drift: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (nx, ny, nz) = self.dims;
        if nx * ny * nz == 0 {
            return Err(Error::Config(format!(
                "grid must be non-empty, got {nx}x{ny}x{nz}"
            )));
        }
        if self.frames < 2 {
            return Err(Error::Config(format!(
                "frames must be at least 2, got {}",
                self.frames
            )));
        }
        check_draw("mu", self.mu, f64::NEG_INFINITY, f64::INFINITY)?;
        check_draw("sigma", self.sigma, 0.0, f64::INFINITY)?;
        if self.sigma.lo() <= 0.0 {
            return Err(Error::Config(format!(
                "sigma must be strictly positive, got {}",
                self.sigma.lo()
            )));
        }
        check_draw("rho", self.rho, -1.0, 1.0)?;
        if self.rho.lo() <= -1.0 || self.rho.hi() >= 1.0 {
            return Err(Error::Config(format!(
                "rho must lie strictly inside (-1, 1), got [{}, {}]",
                self.rho.lo(),
                self.rho.hi()
            )));
        }
        for (k, spike) in self.spikes.iter().enumerate() {
            if spike.frame < 1 || spike.frame > self.frames {
                return Err(Error::Config(format!(
                    "spike {}: frame {} is outside 1..={}",
                    k + 1,
                    spike.frame,
                    self.frames
                )));
            }
            if !spike.factor.is_finite() || spike.factor < 0.0 {
                return Err(Error::Config(format!(
                    "spike {}: factor must be finite and >= 0, got {}",
                    k + 1,
                    spike.factor
                )));
            }
        }
        if let Some(s) = self.drift {
            if !s.is_finite() {
                return Err(Error::Config(format!("drift slope must be finite, got {s}")));
            }
        }
        Ok(())
    }
}

fn check_draw(name: &str, draw: ParamDraw, lo: f64, hi: f64) -> Result<()> {
    let (a, b) = (draw.lo(), draw.hi());
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::Config(format!("{name}: endpoints must be finite")));
    }
    if a > b {
        return Err(Error::Config(format!(
            "{name}: range minimum {a} exceeds maximum {b}"
        )));
    }
    if a < lo || b > hi {
        return Err(Error::Config(format!(
            "{name}: values [{a}, {b}] fall outside [{lo}, {hi}]"
        )));
    }
    Ok(())
}

/// A generated volume together with the true per-voxel parameters it was
/// drawn from (before any artifact was applied).
#[derive(Debug, Clone)]
pub struct SimulatedVolume {
    pub volume: TimeSeriesVolume,
    pub params: VoxelNoiseParams,
}

/// SplitMix64 finalizer over `seed + index * golden`, giving every counter
/// value a well-mixed, independent stream seed.
fn substream(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Artifact substreams live far outside the voxel index range.
const ARTIFACT_STREAM_BASE: u64 = 1 << 32;

enum Drawer {
    Const(f64),
    Uniform(Uniform<f64>),
}

impl Drawer {
    fn new(draw: ParamDraw) -> Self {
        match draw {
            ParamDraw::Const(v) => Drawer::Const(v),
            ParamDraw::Uniform(lo, hi) => {
                Drawer::Uniform(Uniform::new_inclusive(lo, hi).expect("validated range"))
            }
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Drawer::Const(v) => *v,
            Drawer::Uniform(u) => u.sample(rng),
        }
    }
}

/// Generates a stationary AR(1) volume: per voxel, parameters are drawn
/// first, then `e_1 ~ N(0, sigma^2)` and
/// `e_t = rho * e_{t-1} + N(0, sigma^2 * (1 - rho^2))`, with `mu` added on.
pub fn simulate_ar1_volume(spec: &SimulationSpec) -> Result<SimulatedVolume> {
    spec.validate()?;
    let voxels = spec.dims.0 * spec.dims.1 * spec.dims.2;
    let frames = spec.frames;
    let mu_draw = Drawer::new(spec.mu);
    let sigma_draw = Drawer::new(spec.sigma);
    let rho_draw = Drawer::new(spec.rho);

    let mut values = vec![0.0f64; voxels * frames];
    let drawn: Vec<(f64, f64)> = values
        .par_chunks_mut(frames)
        .enumerate()
        .map(|(i, trace)| {
            let mut rng = ChaCha8Rng::seed_from_u64(substream(spec.seed, i as u64));
            let mu = mu_draw.sample(&mut rng);
            let sigma = sigma_draw.sample(&mut rng);
            let rho = rho_draw.sample(&mut rng);
            let z: f64 = rng.sample(StandardNormal);
            let mut e = sigma * z;
            trace[0] = mu + e;
            let innovation_sd = sigma * (1.0 - rho * rho).sqrt();
            for slot in trace.iter_mut().skip(1) {
                let z: f64 = rng.sample(StandardNormal);
                e = rho * e + innovation_sd * z;
                *slot = mu + e;
            }
            (sigma, rho)
        })
        .collect();

    let (sigma, rho): (Vec<f64>, Vec<f64>) = drawn.into_iter().unzip();
    let params = VoxelNoiseParams::new(
        spec.dims,
        (0..voxels).collect(),
        sigma,
        rho,
        EstimatorOptions::default(),
        0,
    )?;

    let mut volume =
        TimeSeriesVolume::new(spec.dims, frames, values)?.with_spacing(spec.voxel_mm, spec.tr);
    for (k, spike) in spec.spikes.iter().enumerate() {
        let spike_seed = substream(spec.seed, ARTIFACT_STREAM_BASE + k as u64);
        volume = inject_spike(&volume, &params, spike.frame, spike.factor, spike_seed)?;
    }
    if let Some(slope) = spec.drift {
        volume = inject_drift(&volume, slope)?;
    }
    Ok(SimulatedVolume { volume, params })
}

/// Adds an independent `N(0, (factor * sigma_i)^2)` draw to frame `frame`
/// (1-based) of every voxel the parameters cover. A factor of zero returns
/// an exact copy.
///
/// This additive white burst is a deliberately simple stand-in for real
/// artifact structure; it produces a known bump in difference variance at
/// the two frame pairs touching `frame`, which is what calibration checks
/// need.
pub fn inject_spike(
    volume: &TimeSeriesVolume,
    params: &VoxelNoiseParams,
    frame: usize,
    factor: f64,
    seed: u64,
) -> Result<TimeSeriesVolume> {
    if volume.dims() != params.dims() {
        return Err(Error::Geometry(format!(
            "volume grid {:?} does not match noise parameter grid {:?}",
            volume.dims(),
            params.dims()
        )));
    }
    let frames = volume.frames();
    if frame < 1 || frame > frames {
        return Err(Error::InvalidInput(format!(
            "spike frame {frame} is outside 1..={frames}"
        )));
    }
    if !factor.is_finite() || factor < 0.0 {
        return Err(Error::InvalidInput(format!(
            "spike factor must be finite and >= 0, got {factor}"
        )));
    }
    if factor == 0.0 {
        return Ok(volume.clone());
    }
    let mut values = volume.values().to_vec();
    let sigma = params.sigma();
    // Bursts by voxel position; chunks pair each voxel with its own slot.
    let bursts: Vec<(usize, f64)> = params
        .voxel_indices()
        .par_iter()
        .enumerate()
        .map(|(k, &i)| {
            let mut rng = ChaCha8Rng::seed_from_u64(substream(seed, i as u64));
            let z: f64 = rng.sample(StandardNormal);
            (i, factor * sigma[k] * z)
        })
        .collect();
    for (i, burst) in bursts {
        values[i * frames + (frame - 1)] += burst;
    }
    TimeSeriesVolume::new(volume.dims(), frames, values)
        .map(|v| v.with_spacing(volume.voxel_mm(), volume.tr()))
}

/// Adds `slope * t` to every voxel at frame `t` (1-based). A zero slope
/// returns an exact copy.
pub fn inject_drift(volume: &TimeSeriesVolume, slope: f64) -> Result<TimeSeriesVolume> {
    if !slope.is_finite() {
        return Err(Error::InvalidInput(format!(
            "drift slope must be finite, got {slope}"
        )));
    }
    if slope == 0.0 {
        return Ok(volume.clone());
    }
    let frames = volume.frames();
    let mut values = volume.values().to_vec();
    for trace in values.chunks_mut(frames) {
        for (t, v) in trace.iter_mut().enumerate() {
            *v += slope * (t + 1) as f64;
        }
    }
    TimeSeriesVolume::new(volume.dims(), frames, values)
        .map(|v| v.with_spacing(volume.voxel_mm(), volume.tr()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    voxels: Option<usize>,
    nx: Option<usize>,
    ny: Option<usize>,
    nz: Option<usize>,
    frames: usize,
    #[serde(default)]
    seed: u64,
    mu: RawDraw,
    sigma: RawDraw,
    rho: RawDraw,
    tr: Option<f64>,
    voxel_mm: Option<[f64; 3]>,
    #[serde(default, rename = "spike")]
    spikes: Vec<RawSpike>,
    drift: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawDraw {
    Const(f64),
    Range([f64; 2]),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpike {
    frame: usize,
    factor: f64,
}

impl From<RawDraw> for ParamDraw {
    fn from(raw: RawDraw) -> Self {
        match raw {
            RawDraw::Const(v) => ParamDraw::Const(v),
            RawDraw::Range([lo, hi]) => ParamDraw::Uniform(lo, hi),
        }
    }
}

/// Parses a simulation spec from TOML text.
///
/// Geometry is either `voxels = N` (a flat `N x 1 x 1` grid) or explicit
/// `nx`/`ny`/`nz`; `mu`, `sigma`, and `rho` are numbers or `[lo, hi]`
/// ranges; spikes are `[[spike]]` tables with `frame` and `factor`.
pub fn parse_spec(text: &str) -> Result<SimulationSpec> {
    let raw: RawSpec =
        toml::from_str(text).map_err(|e| Error::Config(format!("simulation spec: {e}")))?;
    let dims = match (raw.voxels, raw.nx, raw.ny, raw.nz) {
        (Some(v), None, None, None) => (v, 1, 1),
        (None, Some(nx), Some(ny), Some(nz)) => (nx, ny, nz),
        _ => {
            return Err(Error::Config(
                "simulation spec: set either voxels or all of nx, ny, nz".into(),
            ))
        }
    };
    let spec = SimulationSpec {
        dims,
        frames: raw.frames,
        seed: raw.seed,
        mu: raw.mu.into(),
        sigma: raw.sigma.into(),
        rho: raw.rho.into(),
        tr: raw.tr,
        voxel_mm: raw.voxel_mm,
        spikes: raw
            .spikes
            .into_iter()
            .map(|s| SpikeSpec {
                frame: s.frame,
                factor: s.factor,
            })
            .collect(),
        drift: raw.drift,
    };
    spec.validate()?;
    Ok(spec)
}

/// Reads and parses a simulation spec file.
pub fn load_spec(path: impl AsRef<Path>) -> Result<SimulationSpec> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_spec(&text).map_err(|e| match e {
        Error::Config(msg) => Error::format(path, msg),
        other => other,
    })
}
