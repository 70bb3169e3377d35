//! Pointwise confidence sets for the density ridge and their coverage.
//!
//! NBB sets estimate the mode of each fiber from the coordinates donated by
//! neighboring ridge points and bootstrap that estimate. The baseline
//! re-estimates the whole ridge on bootstrap resamples of the data.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{NbbError, Result};
use crate::kde::{select_bandwidth, KdeModel};
use crate::nbb::{build_bundle_with, BundleConfig, NormalBundle};
use crate::ridge::{estimate_ridge, ScmsSettings};
use crate::rng::RandomSource;
use crate::scalar::Scalar;
use crate::stats::{interpolated_quantile, mean, sorted, upper_quantile};
use crate::synthetic::{generate, true_fiber_point, SyntheticModel};

const MODE_MAX_ITER: usize = 500;
const MODE_TOL: f64 = 1e-10;
/// Converged mean-shift iterates closer than this (in bandwidth units) are
/// the same mode.
const MODE_MERGE_RADIUS: f64 = 0.5;
/// Fraction of the merge radius at which an iterate is assigned to an
/// already converged mode without further iteration.
const MODE_CAPTURE_FRACTION: f64 = 0.02;

fn dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y)).sqrt()
}

#[derive(Debug, Clone)]
pub struct FiberMode<T: Scalar> {
    pub mode: DVector<T>,
    pub mode_count: usize,
    /// Per-coordinate kernel bandwidth used.
    pub bandwidth: DVector<T>,
}

/// Silverman's rule for each coordinate of an m x c sample.
pub fn silverman_bandwidth<T: Scalar>(coords: &DMatrix<T>) -> DVector<T> {
    let (m, c) = coords.shape();
    let factor = (T::lit(4.0) / (T::from_usize_lossy(c + 2) * T::from_usize_lossy(m)))
        .powf(T::one() / T::from_usize_lossy(c + 4));
    DVector::from_iterator(
        c,
        coords.column_iter().map(|col| {
            let mu = col.sum() / T::from_usize_lossy(m);
            let var = col.iter().map(|&v| (v - mu) * (v - mu)).fold(T::zero(), |a, b| a + b)
                / T::from_usize_lossy(m.max(2) - 1);
            factor * var.sqrt()
        }),
    )
}

/// Fiber sample divided by its per-coordinate bandwidth, with duplicate
/// rows folded into multiplicities. Rows are stored row-major in
/// lexicographic order.
struct ScaledSample<T: Scalar> {
    z: Vec<T>,
    log_mult: Vec<T>,
    c: usize,
    bandwidth: DVector<T>,
    scratch: Vec<T>,
}

enum Scaled<T: Scalar> {
    Constant(DVector<T>),
    Sample(ScaledSample<T>),
}

/// Kernel-weighted moments at one query point, in bandwidth units.
struct LocalMoments<T: Scalar> {
    log_density: T,
    mean: DVector<T>,
    cov: DMatrix<T>,
}

impl<T: Scalar> ScaledSample<T> {
    fn prepare(coords: &DMatrix<T>, bandwidth: Option<T>) -> Result<Scaled<T>> {
        let (m, c) = coords.shape();
        if m < 3 {
            return Err(NbbError::InsufficientFiberSample(m));
        }
        let mut bw = match bandwidth {
            Some(h) if h > T::zero() => DVector::from_element(c, h),
            Some(h) => return Err(NbbError::InvalidParameter(format!("fiber bandwidth must be positive, got {h}"))),
            None => silverman_bandwidth(coords),
        };
        if bw.iter().all(|&b| b == T::zero()) {
            return Ok(Scaled::Constant(coords.row(0).transpose()));
        }
        for b in bw.iter_mut() {
            if *b == T::zero() {
                *b = T::one();
            }
        }
        let mut rows = vec![T::zero(); m * c];
        for i in 0..m {
            for a in 0..c {
                rows[i * c + a] = coords[(i, a)] / bw[a];
            }
        }
        let row = |i: usize| &rows[i * c..(i + 1) * c];
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_unstable_by(|&i, &j| {
            row(i)
                .iter()
                .zip(row(j))
                .map(|(a, b)| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let mut z = Vec::with_capacity(m * c);
        let mut counts: Vec<usize> = Vec::new();
        for &i in &order {
            if !counts.is_empty() && z[z.len() - c..] == *row(i) {
                *counts.last_mut().unwrap() += 1;
            } else {
                z.extend_from_slice(row(i));
                counts.push(1);
            }
        }
        Ok(Scaled::Sample(Self {
            z,
            log_mult: counts.iter().map(|&k| T::from_usize_lossy(k).ln()).collect(),
            c,
            bandwidth: bw,
            scratch: vec![T::zero(); counts.len()],
        }))
    }

    fn row(&self, i: usize) -> &[T] {
        &self.z[i * self.c..(i + 1) * self.c]
    }

    /// Number of distinct rows.
    fn len(&self) -> usize {
        self.scratch.len()
    }

    /// Fills the weighted kernel exponents at `y` and returns their maximum.
    fn exponents(&mut self, y: &[T]) -> T {
        let mut emax = T::neg_infinity();
        for i in 0..self.len() {
            let d2 = self.z[i * self.c..(i + 1) * self.c]
                .iter()
                .zip(y)
                .fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
            let e = self.log_mult[i] - d2 / T::lit(2.0);
            self.scratch[i] = e;
            if e > emax {
                emax = e;
            }
        }
        emax
    }

    fn log_density(&mut self, y: &[T]) -> T {
        let emax = self.exponents(y);
        emax + self.scratch.iter().map(|&v| (v - emax).exp()).fold(T::zero(), |a, b| a + b).ln()
    }

    fn moments(&mut self, y: &[T]) -> LocalMoments<T> {
        let c = self.c;
        let emax = self.exponents(y);
        let mut den = T::zero();
        let mut mean = DVector::<T>::zeros(c);
        let mut second = DMatrix::<T>::zeros(c, c);
        for i in 0..self.len() {
            let w = (self.scratch[i] - emax).exp();
            den += w;
            let row = &self.z[i * c..(i + 1) * c];
            for a in 0..c {
                let wa = w * (row[a] - y[a]);
                mean[a] += wa;
                for b in a..c {
                    second[(a, b)] += wa * (row[b] - y[b]);
                }
            }
        }
        mean /= den;
        let mut cov = DMatrix::<T>::zeros(c, c);
        for a in 0..c {
            for b in a..c {
                let v = second[(a, b)] / den - mean[a] * mean[b];
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
        }
        for (mv, &yv) in mean.iter_mut().zip(y) {
            *mv += yv;
        }
        LocalMoments {
            log_density: emax + den.ln(),
            mean,
            cov,
        }
    }

    /// Scalar version of [`Self::ascend`] for one-dimensional fibers.
    fn ascend_1d(&mut self, mut y: T, known: &[T], capture: T) -> T {
        let mut newton = true;
        let mut last_newton: Option<(T, T)> = None;
        for _ in 0..MODE_MAX_ITER {
            let mut emax = T::neg_infinity();
            for (e, (&z, &lm)) in self.scratch.iter_mut().zip(self.z.iter().zip(&self.log_mult)) {
                let d = z - y;
                *e = lm - d * d / T::lit(2.0);
                if *e > emax {
                    emax = *e;
                }
            }
            let (mut den, mut s1, mut s2) = (T::zero(), T::zero(), T::zero());
            for (&e, &z) in self.scratch.iter().zip(&self.z) {
                let w = (e - emax).exp();
                let d = z - y;
                den += w;
                s1 += w * d;
                s2 += w * d * d;
            }
            let log_density = emax + den.ln();
            if let Some((ld, shift)) = last_newton.take() {
                if log_density < ld {
                    newton = false;
                    y = shift;
                    continue;
                }
            }
            let mean = s1 / den;
            let var = s2 / den - mean * mean;
            let next = if newton && var < T::one() {
                last_newton = Some((log_density, y + mean));
                y + mean / (T::one() - var)
            } else {
                y + mean
            };
            let moved = (next - y).abs();
            y = next;
            if moved < T::lit(MODE_TOL) || known.iter().any(|&k| (k - y).abs() < capture) {
                break;
            }
        }
        y
    }

    /// Writes the mean-shift point into `shift` and the next iterate into
    /// `next`: the Newton step on the log-density where `newton` is set and
    /// its Hessian `cov - I` is negative definite, `shift` otherwise.
    /// Returns the log-density at `y` and whether Newton was used.
    fn propose(&mut self, y: &[T], newton: bool, shift: &mut [T], next: &mut [T]) -> (T, bool) {
        let local = self.moments(y);
        shift.copy_from_slice(local.mean.as_slice());
        next.copy_from_slice(shift);
        if newton {
            let neg_hessian = DMatrix::<T>::identity(self.c, self.c) - &local.cov;
            if let Some(chol) = neg_hessian.cholesky() {
                let grad = DVector::from_iterator(self.c, shift.iter().zip(y).map(|(&m, &v)| m - v));
                let step = chol.solve(&grad);
                for (nv, (&yv, &sv)) in next.iter_mut().zip(y.iter().zip(step.iter())) {
                    *nv = yv + sv;
                }
                return (local.log_density, true);
            }
        }
        (local.log_density, false)
    }

    /// Ascent from `y` in place; stops early once within `capture` of any
    /// of `known`.
    ///
    /// A Newton step that lowers the density is replaced by the mean-shift
    /// step from the same point, after which only mean shift is used.
    fn ascend(&mut self, y: &mut [T], known: &[Vec<T>], capture: T, mut newton: bool) {
        let c = self.c;
        let mut shift = vec![T::zero(); c];
        let mut next = vec![T::zero(); c];
        let mut undo = vec![T::zero(); c];
        let mut last_newton: Option<T> = None;
        for _ in 0..MODE_MAX_ITER {
            let (log_density, took_newton) = self.propose(y, newton, &mut shift, &mut next);
            if let Some(ld) = last_newton.take() {
                if log_density < ld {
                    newton = false;
                    y.copy_from_slice(&undo);
                    continue;
                }
            }
            if took_newton {
                last_newton = Some(log_density);
                undo.copy_from_slice(&shift);
            }
            let moved = dist(&next, y);
            y.copy_from_slice(&next);
            if moved < T::lit(MODE_TOL) {
                return;
            }
            // a trajectory this close to a known mode ends in its cluster
            if known.iter().any(|ctr| dist(ctr, y) < capture) {
                return;
            }
        }
    }
}

/// Gaussian mean-shift mode search started from every sample point.
///
/// Iterates closer than half a bandwidth are merged; the returned mode is
/// the merged iterate of highest estimated density.
pub fn fiber_mode<T: Scalar>(coords: &DMatrix<T>, bandwidth: Option<T>) -> Result<FiberMode<T>> {
    let mut sample = match ScaledSample::prepare(coords, bandwidth)? {
        Scaled::Constant(mode) => {
            let c = mode.len();
            return Ok(FiberMode {
                mode,
                mode_count: 1,
                bandwidth: DVector::zeros(c),
            });
        }
        Scaled::Sample(s) => s,
    };
    let merge = T::lit(MODE_MERGE_RADIUS);
    let capture = merge * T::lit(MODE_CAPTURE_FRACTION);
    let mut centers: Vec<Vec<T>> = Vec::new();
    if sample.c == 1 {
        let mut known: Vec<T> = Vec::new();
        for start in 0..sample.len() {
            let y = sample.ascend_1d(sample.z[start], &known, capture);
            if !known.iter().any(|&k| (k - y).abs() < merge) {
                known.push(y);
            }
        }
        centers = known.into_iter().map(|k| vec![k]).collect();
    } else {
        for start in 0..sample.len() {
            let mut y = sample.row(start).to_vec();
            sample.ascend(&mut y, &centers, capture, true);
            if !centers.iter().any(|ctr| dist(ctr, &y) < merge) {
                centers.push(y);
            }
        }
    }
    let mut best = 0;
    let mut best_density = sample.log_density(&centers[0]);
    for (i, centre) in centers.iter().enumerate().skip(1) {
        let dens = sample.log_density(centre);
        if dens > best_density {
            best = i;
            best_density = dens;
        }
    }
    let mode_count = centers.len();
    Ok(FiberMode {
        mode: DVector::from_vec(centers.swap_remove(best)).component_mul(&sample.bandwidth),
        mode_count,
        bandwidth: sample.bandwidth,
    })
}

/// Fiber location statistic whose sampling variability defines the disks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FiberEstimator {
    /// Fiber mode: confidence sets for the density ridge.
    #[default]
    Mode,
    /// Fiber mean: confidence sets for the principal manifold.
    Mean,
}

impl std::str::FromStr for FiberEstimator {
    type Err = NbbError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mode" => Ok(Self::Mode),
            "mean" => Ok(Self::Mean),
            other => Err(NbbError::InvalidParameter(format!("unknown estimator {other:?}"))),
        }
    }
}

/// Returns the estimate and whether the sample looked multimodal.
fn estimate<T: Scalar>(coords: &DMatrix<T>, estimator: FiberEstimator) -> Result<(DVector<T>, bool)> {
    match estimator {
        FiberEstimator::Mode => {
            let m = fiber_mode(coords, None)?;
            Ok((m.mode, m.mode_count > 1))
        }
        FiberEstimator::Mean => {
            if coords.nrows() < 3 {
                return Err(NbbError::InsufficientFiberSample(coords.nrows()));
            }
            Ok((coords.row_mean().transpose(), false))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// One radius from all points and replicates.
    #[default]
    Pooled,
    /// A separate radius per ridge point.
    PerPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Nbb,
    Bootstrap,
}

impl std::str::FromStr for Method {
    type Err = NbbError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nbb" => Ok(Self::Nbb),
            "bootstrap" => Ok(Self::Bootstrap),
            other => Err(NbbError::InvalidParameter(format!("unknown method {other:?}"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Nbb => "nbb",
            Method::Bootstrap => "bootstrap",
        })
    }
}

/// A disk `{center + frame * v : |v - mode| <= radius}` in the normal space
/// of one ridge point.
#[derive(Debug, Clone)]
pub struct Disk<T: Scalar> {
    /// Sample index of the ridge point.
    pub ridge_index: usize,
    pub center: DVector<T>,
    /// n x c orthonormal frame of the normal space.
    pub frame: DMatrix<T>,
    /// Disk center in frame coordinates.
    pub mode: DVector<T>,
    pub radius: T,
}

impl<T: Scalar> Disk<T> {
    /// Disk center in ambient coordinates.
    pub fn ambient_mode(&self) -> DVector<T> {
        &self.center + &self.frame * &self.mode
    }

    /// Whether an ambient point of the normal space lies in the disk.
    pub fn contains(&self, x: &DVector<T>) -> bool {
        let coords = self.frame.transpose() * (x - &self.center);
        (coords - &self.mode).norm() <= self.radius
    }
}

#[derive(Debug, Clone)]
pub struct ConfidenceSet<T: Scalar> {
    pub disks: Vec<Disk<T>>,
    pub level: f64,
    pub method: Method,
    pub replicates: usize,
    pub estimator: FiberEstimator,
    pub pooling: Pooling,
    /// Ridge indices whose fiber estimate looked multimodal.
    pub multimodal: Vec<usize>,
    /// Bootstrap replicates dropped for having too few converged points.
    pub discarded: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct NbbSetConfig {
    pub level: f64,
    pub replicates: usize,
    pub estimator: FiberEstimator,
    pub pooling: Pooling,
}

impl NbbSetConfig {
    pub fn new(level: f64, replicates: usize) -> Self {
        Self {
            level,
            replicates,
            estimator: FiberEstimator::Mode,
            pooling: Pooling::Pooled,
        }
    }
}

fn check_level_and_b(level: f64, replicates: usize) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(NbbError::InvalidParameter(format!("level must lie in (0, 1), got {level}")));
    }
    if replicates < 50 {
        return Err(NbbError::InvalidParameter(format!("need at least 50 bootstrap replicates, got {replicates}")));
    }
    Ok(())
}

fn resample_rows<T: Scalar>(m: &DMatrix<T>, rng: &mut impl Rng) -> DMatrix<T> {
    let rows = m.nrows();
    let idx: Vec<usize> = (0..rows).map(|_| rng.random_range(0..rows)).collect();
    DMatrix::from_fn(rows, m.ncols(), |r, c| m[(idx[r], c)])
}

/// NBB pointwise confidence set: per ridge point, the fiber estimate from
/// donated coordinates, and a radius from bootstrap resamples of them.
pub fn nbb_confidence_set<T: Scalar>(bundle: &NormalBundle<T>, config: &NbbSetConfig, rng: RandomSource) -> Result<ConfidenceSet<T>> {
    check_level_and_b(config.level, config.replicates)?;
    if bundle.k() < 3 {
        return Err(NbbError::InsufficientFiberSample(bundle.k()));
    }
    let per_point: Vec<(DVector<T>, bool, Vec<f64>)> = (0..bundle.retained_count())
        .into_par_iter()
        .map(|a| {
            let coords = bundle.donated_coords(a);
            let (center, multimodal) = estimate(&coords, config.estimator)?;
            let mut r = rng.substream(a as u64).rng();
            let mut dists = Vec::with_capacity(config.replicates);
            for _ in 0..config.replicates {
                let boot = resample_rows(&coords, &mut r);
                let (est, _) = estimate(&boot, config.estimator)?;
                dists.push((est - &center).norm().as_f64());
            }
            Ok((center, multimodal, dists))
        })
        .collect::<Result<_>>()?;
    let radii: Vec<f64> = match config.pooling {
        Pooling::Pooled => {
            let all: Vec<f64> = per_point.iter().flat_map(|p| p.2.iter().copied()).collect();
            let eps = upper_quantile(&sorted(&all), config.level);
            vec![eps; per_point.len()]
        }
        Pooling::PerPoint => per_point.iter().map(|p| upper_quantile(&sorted(&p.2), config.level)).collect(),
    };
    let mut multimodal = Vec::new();
    let disks = per_point
        .into_iter()
        .zip(radii)
        .enumerate()
        .map(|(a, ((mode, multi, _), radius))| {
            let rp = bundle.ridge_point(a);
            if multi {
                multimodal.push(bundle.retained[a]);
            }
            Disk {
                ridge_index: bundle.retained[a],
                center: rp.position.clone(),
                frame: bundle.frames.frames[a].clone(),
                mode,
                radius: T::lit(radius),
            }
        })
        .collect();
    if !multimodal.is_empty() {
        log::warn!("{} fibers have multimodal coordinate samples", multimodal.len());
    }
    Ok(ConfidenceSet {
        disks,
        level: config.level,
        method: Method::Nbb,
        replicates: config.replicates,
        estimator: config.estimator,
        pooling: config.pooling,
        multimodal,
        discarded: 0,
    })
}

/// Largest tolerated fraction of discarded bootstrap replicates.
pub const MAX_DISCARD_FRACTION: f64 = 0.2;

/// Plain bootstrap pointwise set: disks of one pooled radius around the
/// estimated ridge points, the radius being the upper quantile of distances
/// from bootstrap ridge points to the original estimated ridge.
pub fn bootstrap_confidence_set<T: Scalar>(
    data: &Dataset<T>,
    settings: &ScmsSettings<T>,
    bandwidth: T,
    level: f64,
    replicates: usize,
    rng: RandomSource,
) -> Result<ConfidenceSet<T>> {
    check_level_and_b(level, replicates)?;
    let d = settings.d;
    let model = KdeModel::new(data.clone(), bandwidth)?;
    let ridge: Vec<_> = estimate_ridge(data, &model, settings)?
        .into_iter()
        .enumerate()
        .filter(|(_, r)| r.converged())
        .collect();
    if ridge.len() < d + 1 {
        return Err(NbbError::InsufficientRidgePoints {
            needed: d + 1,
            available: ridge.len(),
        });
    }
    let anchors: Vec<&DVector<T>> = ridge.iter().map(|(_, r)| &r.position).collect();
    let replicate_dists: Vec<Option<Vec<f64>>> = (0..replicates)
        .into_par_iter()
        .map(|b| {
            let mut r = rng.substream(b as u64).rng();
            let boot = Dataset::new(resample_rows(data.points(), &mut r))?;
            let boot_model = KdeModel::new(boot.clone(), bandwidth)?;
            let boot_ridge = estimate_ridge(&boot, &boot_model, settings)?;
            let conv: Vec<_> = boot_ridge.iter().filter(|p| p.converged()).collect();
            if conv.len() < d + 1 {
                return Ok(None);
            }
            Ok(Some(
                conv.iter()
                    .map(|p| {
                        anchors
                            .iter()
                            .map(|a| (&p.position - *a).norm().as_f64())
                            .fold(f64::INFINITY, f64::min)
                    })
                    .collect(),
            ))
        })
        .collect::<Result<_>>()?;
    let discarded = replicate_dists.iter().filter(|r| r.is_none()).count();
    if discarded as f64 > MAX_DISCARD_FRACTION * replicates as f64 {
        return Err(NbbError::TooManyDiscards {
            discarded,
            total: replicates,
        });
    }
    let all: Vec<f64> = replicate_dists.into_iter().flatten().flatten().collect();
    let eps = T::lit(upper_quantile(&sorted(&all), level));
    let c = data.dim() - d;
    let disks = ridge
        .into_iter()
        .map(|(i, r)| Disk {
            ridge_index: i,
            center: r.position,
            frame: r.frame_vc,
            mode: DVector::zeros(c),
            radius: eps,
        })
        .collect();
    Ok(ConfidenceSet {
        disks,
        level,
        method: Method::Bootstrap,
        replicates,
        estimator: FiberEstimator::Mode,
        pooling: Pooling::Pooled,
        multimodal: Vec::new(),
        discarded,
    })
}

/// Fixed inputs of a coverage experiment.
#[derive(Debug, Clone)]
pub struct CoverageConfig {
    pub d: usize,
    pub alpha: f64,
    /// Neighbors for NBB; `None` uses the default for the retained count.
    pub k: Option<usize>,
    pub estimator: FiberEstimator,
    /// Record wall-clock time; when false `mean_seconds` is omitted so
    /// reports are reproducible byte for byte.
    pub timing: bool,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        Self {
            d: 1,
            alpha: 2.0,
            k: None,
            estimator: FiberEstimator::Mode,
            timing: true,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CoverageReport {
    pub method: Method,
    #[serde(rename = "N")]
    pub n_samples: usize,
    pub runs: usize,
    pub level: f64,
    #[serde(rename = "B")]
    pub replicates: usize,
    pub seed: u64,
    pub mean_coverage: f64,
    pub q05: f64,
    pub q95: f64,
    pub mean_seconds: Option<f64>,
    /// Coverage rate of each successful run.
    pub rates: Vec<f64>,
    pub failed_runs: usize,
    /// Ridge points whose normal space missed the true ridge.
    pub unmatched_fibers: usize,
}

pub struct RunCoverage {
    pub rate: f64,
    pub seconds: f64,
    pub unmatched: usize,
}

/// Fraction of disks containing the true-ridge point of their fiber.
pub fn set_coverage<T: Scalar>(model: &SyntheticModel, set: &ConfidenceSet<T>) -> (f64, usize) {
    let mut covered = 0;
    let mut unmatched = 0;
    for disk in &set.disks {
        match true_fiber_point(model, &disk.center, &disk.frame) {
            Some(t) if disk.contains(&t) => covered += 1,
            Some(_) => {}
            None => unmatched += 1,
        }
    }
    (covered as f64 / set.disks.len().max(1) as f64, unmatched)
}

/// One coverage run on a fresh sample. The sample depends only on
/// `rng.substream(0)`, so both methods see the same data for the same source.
pub fn coverage_run<T: Scalar>(
    model: &SyntheticModel,
    method: Method,
    n_samples: usize,
    level: f64,
    replicates: usize,
    config: &CoverageConfig,
    rng: RandomSource,
) -> Result<RunCoverage> {
    let data: Dataset<T> = generate(model, n_samples, rng.substream(0))?;
    let h = select_bandwidth(&data, T::lit(config.alpha))?;
    let start = Instant::now();
    let set = match method {
        Method::Nbb => {
            let mut cfg = BundleConfig::new(config.d);
            cfg.alpha = T::lit(config.alpha);
            cfg.bandwidth = Some(h);
            cfg.k = config.k;
            let bundle = build_bundle_with(&data, &cfg)?;
            let mut set_cfg = NbbSetConfig::new(level, replicates);
            set_cfg.estimator = config.estimator;
            nbb_confidence_set(&bundle, &set_cfg, rng.substream(1))?
        }
        Method::Bootstrap => {
            bootstrap_confidence_set(&data, &ScmsSettings::new(config.d), h, level, replicates, rng.substream(1))?
        }
    };
    let seconds = start.elapsed().as_secs_f64();
    let (rate, unmatched) = set_coverage(model, &set);
    Ok(RunCoverage { rate, seconds, unmatched })
}

/// Coverage of the true ridge by pointwise confidence sets over independent
/// samples of a synthetic model.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_coverage<T: Scalar>(
    model: &SyntheticModel,
    method: Method,
    n_samples: usize,
    runs: usize,
    level: f64,
    replicates: usize,
    rng: RandomSource,
    config: &CoverageConfig,
) -> Result<CoverageReport> {
    if runs == 0 {
        return Err(NbbError::InvalidParameter("runs must be positive".into()));
    }
    check_level_and_b(level, replicates)?;
    let mut rates = Vec::with_capacity(runs);
    let mut seconds = Vec::with_capacity(runs);
    let mut failed = 0;
    let mut unmatched = 0;
    for run in 0..runs {
        match coverage_run::<T>(model, method, n_samples, level, replicates, config, rng.substream(run as u64)) {
            Ok(rc) => {
                rates.push(rc.rate);
                seconds.push(rc.seconds);
                unmatched += rc.unmatched;
            }
            Err(e) => {
                log::warn!("coverage run {run} failed: {e}");
                failed += 1;
            }
        }
    }
    if rates.is_empty() {
        return Err(NbbError::InvalidData(format!("all {runs} coverage runs failed")));
    }
    let s = sorted(&rates);
    Ok(CoverageReport {
        method,
        n_samples,
        runs,
        level,
        replicates,
        seed: rng.seed,
        mean_coverage: mean(&rates),
        q05: interpolated_quantile(&s, 0.05),
        q95: interpolated_quantile(&s, 0.95),
        mean_seconds: config.timing.then(|| mean(&seconds)),
        rates,
        failed_runs: failed,
        unmatched_fibers: unmatched,
    })
}
