use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use nbb_core::dataset::Dataset;
use nbb_core::frame::FrameOptions;
use nbb_core::inference::{
    bootstrap_confidence_set, evaluate_coverage, nbb_confidence_set, ConfidenceSet, CoverageConfig, CoverageReport,
    FiberEstimator, Method, NbbSetConfig, Pooling,
};
use nbb_core::io::{bundle_frames, ridge_frames, write_augmented_csv, write_confidence_csv, write_constructed_csv, write_ridge_csv};
use nbb_core::kde::{select_bandwidth, KdeModel};
use nbb_core::linalg::EigenSolver;
use nbb_core::nbb::{build_bundle_with, construct, construct_subframe, BundleConfig, ConstructionMode, NormalBundle};
use nbb_core::ridge::{eigengap_dimension, estimate_ridge, newton_refine, NewtonFrame, RidgeStatus, ScmsSettings};
use nbb_core::synthetic::{generate, SyntheticModel};
use nbb_core::{NbbError, RandomSource, Result};
use serde::Serialize;

use crate::args::*;
use crate::output::OutDir;

#[derive(Serialize)]
struct Manifest<'a, C: Serialize, R: Serialize> {
    command: &'static str,
    version: &'static str,
    config: &'a C,
    result: R,
}

fn manifest<'a, C: Serialize, R: Serialize>(command: &'static str, config: &'a C, result: R) -> Manifest<'a, C, R> {
    Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config,
        result,
    }
}

fn usage(msg: impl Into<String>) -> NbbError {
    NbbError::InvalidParameter(msg.into())
}

fn load(path: &Path) -> Result<Dataset<f64>> {
    let file = File::open(path).map_err(|e| NbbError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let data = Dataset::read_csv(BufReader::new(file))?;
    log::info!("read {} rows x {} columns from {}", data.len(), data.dim(), path.display());
    Ok(data)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(usage(format!("alpha must be positive, got {alpha}")))
    }
}

fn model_for(kind: Kind, sigma: f64, l: usize, theta: (f64, f64), seed: u64) -> Result<SyntheticModel> {
    match kind {
        Kind::Circle => SyntheticModel::circle(sigma),
        Kind::Parabola => SyntheticModel::parabola(sigma),
        Kind::Wheel => SyntheticModel::wheel(l, sigma, theta, RandomSource::new(seed).substream(0)),
    }
}

pub fn gen(args: &GenArgs) -> Result<()> {
    let model = model_for(args.kind, args.sigma, args.l, (args.theta_min, args.theta_max), args.seed)?;
    let data: Dataset<f64> = generate(&model, args.n, RandomSource::new(args.seed).substream(1))?;
    let out = OutDir::create(&args.common.output)?;
    out.write("data.csv", |w| data.write_csv(w))?;
    out.json("manifest.json", &manifest("gen", args, &model))?;
    Ok(())
}

#[derive(Serialize)]
struct BandwidthResult {
    h: f64,
    n: usize,
    #[serde(rename = "N")]
    n_samples: usize,
}

pub fn bandwidth(args: &BandwidthArgs) -> Result<()> {
    check_alpha(args.alpha)?;
    let data = load(&args.input)?;
    let h = select_bandwidth(&data, args.alpha)?;
    let out = OutDir::create(&args.common.output)?;
    let result = BandwidthResult {
        h,
        n: data.dim(),
        n_samples: data.len(),
    };
    out.json("bandwidth.json", &manifest("bandwidth", args, result))?;
    println!("{h:?}");
    Ok(())
}

fn scms_settings(opts: &RidgeOptions, n: usize) -> Result<ScmsSettings<f64>> {
    if opts.d == 0 || opts.d >= n {
        return Err(usage(format!("ridge dimension must satisfy 0 < d < n = {n}, got d = {}", opts.d)));
    }
    check_alpha(opts.alpha)?;
    let eigen = match opts.eigen {
        Eigen::Full => EigenSolver::Full,
        Eigen::Partial => EigenSolver::Partial,
    };
    let settings = ScmsSettings::new(opts.d)
        .with_theta0(opts.theta0)
        .with_max_iterations(opts.max_iterations)
        .with_eigen(eigen);
    settings.validate(n)?;
    Ok(settings)
}

fn resolve_bandwidth(opts: &RidgeOptions, data: &Dataset<f64>) -> Result<f64> {
    match opts.h {
        Some(h) if h > 0.0 && h.is_finite() => Ok(h),
        Some(h) => Err(usage(format!("bandwidth must be positive, got {h}"))),
        None => select_bandwidth(data, opts.alpha),
    }
}

#[derive(Serialize, Default)]
struct StatusCounts {
    converged: usize,
    saddle: usize,
    max_iterations: usize,
    invalid: usize,
}

impl StatusCounts {
    fn of(statuses: impl Iterator<Item = RidgeStatus>) -> Self {
        let mut s = Self::default();
        for st in statuses {
            match st {
                RidgeStatus::Converged => s.converged += 1,
                RidgeStatus::Saddle => s.saddle += 1,
                RidgeStatus::MaxIterations => s.max_iterations += 1,
                RidgeStatus::Invalid => s.invalid += 1,
            }
        }
        s
    }
}

#[derive(Serialize)]
struct RidgeResult {
    h: f64,
    n: usize,
    #[serde(rename = "N")]
    n_samples: usize,
    status: StatusCounts,
    newton_degraded: usize,
}

pub fn ridge(args: &RidgeArgs) -> Result<()> {
    let data = load(&args.ridge.input)?;
    let settings = scms_settings(&args.ridge, data.dim())?;
    let h = resolve_bandwidth(&args.ridge, &data)?;
    let model = KdeModel::new(data.clone(), h)?.with_truncation(args.ridge.truncate_k)?;
    let mut points = estimate_ridge(&data, &model, &settings)?;
    let mut degraded = 0;
    if let Some(mode) = args.newton {
        let mode = match mode {
            Newton::Frozen => NewtonFrame::Frozen,
            Newton::Current => NewtonFrame::Current,
            Newton::Corrected => NewtonFrame::Corrected,
        };
        for p in points.iter_mut().filter(|p| p.converged()) {
            let outcome = newton_refine(&p.position, &model, settings.d, mode)?;
            degraded += usize::from(outcome.degraded());
            *p = outcome.point;
        }
    }
    let out = OutDir::create(&args.common.output)?;
    out.write("ridge.csv", |w| write_ridge_csv(&points, w))?;
    out.json("frames.json", &ridge_frames(&points))?;
    let result = RidgeResult {
        h,
        n: data.dim(),
        n_samples: data.len(),
        status: StatusCounts::of(points.iter().map(|p| p.status)),
        newton_degraded: degraded,
    };
    out.json("manifest.json", &manifest("ridge", args, result))?;
    Ok(())
}

fn bundle(opts: &BundleOptions) -> Result<NormalBundle<f64>> {
    let data = load(&opts.ridge.input)?;
    let scms = scms_settings(&opts.ridge, data.dim())?;
    let c = data.dim() - opts.ridge.d;
    if let Some(cs) = opts.c_sub {
        if cs == 0 || cs > c {
            return Err(usage(format!("c-sub must lie in 1..={c}, got {cs}")));
        }
    }
    let bandwidth = resolve_bandwidth(&opts.ridge, &data)?;
    let cfg = BundleConfig {
        d: opts.ridge.d,
        alpha: opts.ridge.alpha,
        k: opts.k,
        bandwidth: Some(bandwidth),
        scms,
        frame: FrameOptions {
            seed: opts.frame_seed,
            c_sub: opts.c_sub,
        },
        truncate_k: opts.ridge.truncate_k,
    };
    build_bundle_with(&data, &cfg)
}

fn construction(args: &NbbArgs) -> Result<(NormalBundle<f64>, nbb_core::ConstructedData, ConstructionMode)> {
    let mode = match args.mode {
        Mode::Framed => ConstructionMode::Framed,
        Mode::Projected => ConstructionMode::Projected,
        Mode::Raw => ConstructionMode::Raw,
    };
    if args.bundle.c_sub.is_some() && mode != ConstructionMode::Framed {
        return Err(usage("--c-sub only applies to --mode framed"));
    }
    let b = bundle(&args.bundle)?;
    let constructed = if b.frames.c_sub.is_some_and(|cs| cs < b.params.c) {
        construct_subframe(&b, RandomSource::new(args.seed))?
    } else {
        construct(&b, mode)?
    };
    Ok((b, constructed, mode))
}

pub fn nbb(args: &NbbArgs) -> Result<()> {
    let (b, constructed, mode) = construction(args)?;
    let out = OutDir::create(&args.common.output)?;
    out.write("ridge.csv", |w| write_ridge_csv(&b.ridge, w))?;
    out.json("frames.json", &bundle_frames(&b))?;
    out.write("constructed.csv", |w| write_constructed_csv(&constructed, w))?;
    out.json("manifest.json", &manifest("nbb", args, b.manifest(mode)))?;
    Ok(())
}

#[derive(Serialize)]
struct AugmentResult {
    bundle: nbb_core::nbb::BundleManifest,
    original_rows: usize,
    constructed_rows: usize,
}

pub fn augment(args: &NbbArgs) -> Result<()> {
    let (b, constructed, mode) = construction(args)?;
    let out = OutDir::create(&args.common.output)?;
    out.write("augmented.csv", |w| write_augmented_csv(&b.source, &constructed, w))?;
    let result = AugmentResult {
        bundle: b.manifest(mode),
        original_rows: b.source.len(),
        constructed_rows: constructed.len(),
    };
    out.json("manifest.json", &manifest("augment", args, result))?;
    Ok(())
}

fn estimator(e: Estimator) -> FiberEstimator {
    match e {
        Estimator::Mode => FiberEstimator::Mode,
        Estimator::Mean => FiberEstimator::Mean,
    }
}

fn method(m: MethodArg) -> Method {
    match m {
        MethodArg::Nbb => Method::Nbb,
        MethodArg::Bootstrap => Method::Bootstrap,
    }
}

#[derive(Serialize)]
struct ConfsetResult {
    method: Method,
    h: f64,
    disks: usize,
    level: f64,
    #[serde(rename = "B")]
    replicates: usize,
    estimator: FiberEstimator,
    pooling: Pooling,
    min_radius: f64,
    max_radius: f64,
    discarded: usize,
    /// Ridge indices whose fiber sample looked multimodal.
    multimodal: Vec<usize>,
}

pub fn confset(args: &ConfsetArgs) -> Result<()> {
    let rng = RandomSource::new(args.seed);
    let (set, h): (ConfidenceSet<f64>, f64) = match args.method {
        MethodArg::Nbb => {
            let b = bundle(&args.bundle)?;
            let cfg = NbbSetConfig {
                level: args.level,
                replicates: args.b,
                estimator: estimator(args.estimator),
                pooling: match args.pooling {
                    PoolingArg::Pooled => Pooling::Pooled,
                    PoolingArg::PerPoint => Pooling::PerPoint,
                },
            };
            (nbb_confidence_set(&b, &cfg, rng)?, b.params.h)
        }
        MethodArg::Bootstrap => {
            let o = &args.bundle;
            if o.k.is_some() || o.c_sub.is_some() || args.pooling != PoolingArg::Pooled || args.estimator != Estimator::Mode {
                return Err(usage("--k, --c-sub, --pooling and --estimator do not apply to --method bootstrap"));
            }
            let data = load(&o.ridge.input)?;
            let settings = scms_settings(&o.ridge, data.dim())?;
            let h = resolve_bandwidth(&o.ridge, &data)?;
            (bootstrap_confidence_set(&data, &settings, h, args.level, args.b, rng)?, h)
        }
    };
    let radii = set.disks.iter().map(|d| d.radius);
    let result = ConfsetResult {
        method: set.method,
        h,
        disks: set.disks.len(),
        level: set.level,
        replicates: set.replicates,
        estimator: set.estimator,
        pooling: set.pooling,
        min_radius: radii.clone().fold(f64::INFINITY, f64::min),
        max_radius: radii.fold(f64::NEG_INFINITY, f64::max),
        discarded: set.discarded,
        multimodal: set.multimodal.clone(),
    };
    let out = OutDir::create(&args.common.output)?;
    out.write("confidence.csv", |w| write_confidence_csv(&set, w))?;
    out.json("manifest.json", &manifest("confset", args, result))?;
    Ok(())
}

#[derive(Serialize)]
struct CoverageResult<'a> {
    model: &'a SyntheticModel,
    reports: Vec<CoverageReport>,
}

pub fn coverage(args: &CoverageArgs) -> Result<()> {
    check_alpha(args.alpha)?;
    if args.levels.is_empty() || args.ns.is_empty() || args.methods.is_empty() {
        return Err(usage("--levels, --ns and --methods need at least one value each"));
    }
    let model = model_for(args.kind, args.sigma, 8, (0.0, 1.0), args.seed)?;
    let config = CoverageConfig {
        d: args.d,
        alpha: args.alpha,
        k: args.k,
        estimator: estimator(args.estimator),
        timing: !args.no_timing,
    };
    let mut reports = Vec::new();
    for &level in &args.levels {
        for &n in &args.ns {
            for &m in &args.methods {
                log::info!("coverage: level {level}, N {n}, {}", method(m));
                let r = evaluate_coverage::<f64>(&model, method(m), n, args.runs, level, args.b, RandomSource::new(args.seed), &config)?;
                reports.push(r);
            }
        }
    }
    let out = OutDir::create(&args.common.output)?;
    out.write("coverage.csv", |w| {
        let mut t = csv::Writer::from_writer(w);
        t.write_record(["N", "method", "level", "mean_coverage", "q05", "q95", "mean_seconds"])?;
        for r in &reports {
            t.write_record([
                r.n_samples.to_string(),
                r.method.to_string(),
                format!("{:?}", r.level),
                format!("{:?}", r.mean_coverage),
                format!("{:?}", r.q05),
                format!("{:?}", r.q95),
                r.mean_seconds.map_or(String::new(), |s| format!("{s:?}")),
            ])?;
        }
        t.flush()?;
        Ok(())
    })?;
    let result = CoverageResult { model: &model, reports };
    out.json("coverage.json", &manifest("coverage", args, result))?;
    Ok(())
}

#[derive(Serialize)]
struct DimResult {
    h: f64,
    estimate: nbb_core::ridge::DimensionEstimate,
}

pub fn dim(args: &DimArgs) -> Result<()> {
    check_alpha(args.alpha)?;
    let data = load(&args.input)?;
    let h = select_bandwidth(&data, args.alpha)?;
    let model = KdeModel::new(data.clone(), h)?;
    let estimate = eigengap_dimension(&data, &model)?;
    let d = estimate.d;
    let out = OutDir::create(&args.common.output)?;
    out.json("dimension.json", &manifest("dim", args, DimResult { h, estimate }))?;
    println!("{d}");
    Ok(())
}
