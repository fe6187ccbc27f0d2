//! Framewise signal-change metrics for 4D volumetric time series: the raw
//! root-mean-square of frame-to-frame differences, two standardized variants
//! calibrated against a per-voxel lag-1 autoregressive noise model, outlier
//! frame flagging, and a matching synthetic-data generator.

pub mod cli;
pub mod error;
pub mod flag;
pub mod metrics;
pub mod nifti;
pub mod pipeline;
mod reduce;
pub mod report;
pub mod selftest;
pub mod simulate;
pub mod stats;
pub mod tsv;
pub mod volume;

pub use error::{Error, Result};
pub use flag::FlagPolicy;
pub use metrics::{DvarsSeries, EstimatorOptions, VoxelNoiseParams};
pub use pipeline::{compute_report, ComputeOptions};
pub use report::QcReport;
pub use simulate::SimulationSpec;
pub use volume::{Mask, MaskStrategy, TimeSeriesVolume};
