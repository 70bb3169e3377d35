use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "nbb", version, about = "Normal-bundle bootstrap for density ridges")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a synthetic sample.
    Gen(GenArgs),
    /// Leave-one-out bandwidth times the oversmoothing factor.
    Bandwidth(BandwidthArgs),
    /// Project every sample onto the estimated ridge.
    Ridge(RidgeArgs),
    /// Build the normal bundle and the constructed data.
    Nbb(NbbArgs),
    /// Pointwise confidence set of the ridge.
    Confset(ConfsetArgs),
    /// Coverage and timing of confidence sets on a synthetic model.
    Coverage(CoverageArgs),
    /// Original sample plus constructed rows, labeled by provenance.
    Augment(NbbArgs),
    /// Ridge dimension from Hessian eigengaps.
    Dim(DimArgs),
}

/// Flags shared by every command. Neither the output directory nor the
/// thread count ends up in manifests.
#[derive(Debug, Clone, Args, Serialize)]
pub struct Common {
    /// Output directory; created if missing.
    #[arg(long, short)]
    #[serde(skip)]
    pub output: PathBuf,
    /// Worker threads; 0 uses every available core.
    #[arg(long, default_value_t = 0)]
    #[serde(skip)]
    pub threads: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Circle,
    Parabola,
    Wheel,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long, value_enum, default_value = "circle")]
    pub kind: Kind,
    /// Sample size.
    #[arg(long, default_value_t = 128)]
    pub n: usize,
    #[arg(long, default_value_t = 0.2)]
    pub sigma: f64,
    /// Wheel points.
    #[arg(long, default_value_t = 8)]
    pub l: usize,
    /// Wheel rotation range, lower end.
    #[arg(long, default_value_t = 0.0)]
    pub theta_min: f64,
    /// Wheel rotation range, upper end.
    #[arg(long, default_value_t = 1.0)]
    pub theta_max: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BandwidthArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Eigen {
    Full,
    Partial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Newton {
    Frozen,
    Current,
    Corrected,
}

/// Ridge estimation parameters.
#[derive(Debug, Clone, Args, Serialize)]
pub struct RidgeOptions {
    #[arg(long, short)]
    pub input: PathBuf,
    /// Ridge dimension.
    #[arg(long, default_value_t = 1)]
    pub d: usize,
    #[arg(long, default_value_t = 2.0)]
    pub alpha: f64,
    /// Fixed bandwidth; skips bandwidth selection.
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    pub theta0: f64,
    #[arg(long, default_value_t = 2000)]
    pub max_iterations: usize,
    #[arg(long, value_enum, default_value = "full")]
    pub eigen: Eigen,
    /// Sum each density evaluation over this many nearest samples only.
    #[arg(long)]
    pub truncate_k: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RidgeArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[command(flatten)]
    pub ridge: RidgeOptions,
    /// Refine converged points by Newton iteration.
    #[arg(long, value_enum)]
    pub newton: Option<Newton>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Framed,
    Projected,
    Raw,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BundleOptions {
    #[command(flatten)]
    pub ridge: RidgeOptions,
    /// Ridge neighbors per fiber; defaults to ceil(N/8) clamped to [4, N].
    #[arg(long)]
    pub k: Option<usize>,
    /// Align only this many normal directions.
    #[arg(long)]
    pub c_sub: Option<usize>,
    /// Index (among retained points) whose frame anchors the alignment.
    #[arg(long, default_value_t = 0)]
    pub frame_seed: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct NbbArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[command(flatten)]
    pub bundle: BundleOptions,
    #[arg(long, value_enum, default_value = "framed")]
    pub mode: Mode,
    /// Seed for the random directions of subframe construction.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodArg {
    Nbb,
    Bootstrap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Mode,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingArg {
    Pooled,
    PerPoint,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ConfsetArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[command(flatten)]
    pub bundle: BundleOptions,
    #[arg(long, value_enum, default_value = "nbb")]
    pub method: MethodArg,
    #[arg(long, default_value_t = 0.9)]
    pub level: f64,
    /// Bootstrap replicates.
    #[arg(long, default_value_t = 200)]
    pub b: usize,
    #[arg(long, value_enum, default_value = "mode")]
    pub estimator: Estimator,
    #[arg(long, value_enum, default_value = "pooled")]
    pub pooling: PoolingArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CoverageArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long, value_enum, default_value = "circle")]
    pub kind: Kind,
    #[arg(long, default_value_t = 0.2)]
    pub sigma: f64,
    #[arg(long, value_delimiter = ',', default_value = "0.9")]
    pub levels: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "64,128")]
    pub ns: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "nbb,bootstrap")]
    pub methods: Vec<MethodArg>,
    #[arg(long, default_value_t = 50)]
    pub runs: usize,
    #[arg(long, default_value_t = 200)]
    pub b: usize,
    #[arg(long, default_value_t = 1)]
    pub d: usize,
    #[arg(long, default_value_t = 2.0)]
    pub alpha: f64,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_enum, default_value = "mode")]
    pub estimator: Estimator,
    /// Leave out wall-clock times so reports are reproducible byte for byte.
    #[arg(long)]
    pub no_timing: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DimArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    pub alpha: f64,
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::Gen(a) => &a.common,
            Command::Bandwidth(a) => &a.common,
            Command::Ridge(a) => &a.common,
            Command::Nbb(a) | Command::Augment(a) => &a.common,
            Command::Confset(a) => &a.common,
            Command::Coverage(a) => &a.common,
            Command::Dim(a) => &a.common,
        }
    }
}
