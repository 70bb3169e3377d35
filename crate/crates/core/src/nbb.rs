//! Normal-bundle bootstrap.
//!
//! Every sample `x_i` is projected to its ridge point `r_i`; the projection
//! vector is expressed in the smooth normal frame `E_i` as
//! `n_i = E_i^T (x_i - r_i)`. New points are built at each ridge point from
//! the coordinates of its k nearest ridge neighbors:
//! `x_ij = r_i + E_i n_{K(i, j)}`.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{NbbError, Result};
use crate::frame::{smooth_frame, FrameField, FrameOptions, FrameWarning};
use crate::inference::fiber_mode;
use crate::kde::{select_bandwidth, KdeModel};
use crate::linalg::symmetric_eigen;
use crate::ridge::{estimate_ridge, RidgePoint, ScmsSettings};
use crate::rng::RandomSource;
use crate::scalar::Scalar;

/// `ceil(N / 8)` clamped to `[4, N]`.
pub fn default_k(n_samples: usize) -> usize {
    n_samples.div_ceil(8).max(4).min(n_samples)
}

/// Exhaustive k-nearest neighbors among `positions`. Row `i` starts with `i`
/// itself; remaining ties are broken by the smaller index.
pub fn knn_ridge<T: Scalar>(positions: &[DVector<T>], k: usize) -> Result<Vec<Vec<usize>>> {
    let count = positions.len();
    if k > count {
        return Err(NbbError::KExceedsSampleSize { k, n: count });
    }
    if k == 0 {
        return Err(NbbError::InvalidParameter("k must be at least 1".into()));
    }
    Ok((0..count)
        .into_par_iter()
        .map(|i| {
            let mut cand: Vec<(T, bool, usize)> = (0..count)
                .map(|j| ((&positions[i] - &positions[j]).norm_squared(), j != i, j))
                .collect();
            let cmp = |a: &(T, bool, usize), b: &(T, bool, usize)| {
                a.0.partial_cmp(&b.0)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.1.cmp(&b.1))
                    .then(a.2.cmp(&b.2))
            };
            if k < count {
                cand.select_nth_unstable_by(k - 1, cmp);
                cand.truncate(k);
            }
            cand.sort_by(cmp);
            cand.into_iter().map(|c| c.2).collect()
        })
        .collect())
}

/// Inputs to [`build_bundle_with`] beyond the sample.
#[derive(Debug, Clone)]
pub struct BundleConfig<T: Scalar> {
    pub d: usize,
    /// Oversmoothing factor applied to the leave-one-out bandwidth.
    pub alpha: T,
    /// Neighbors per ridge point; `None` uses [`default_k`] of the retained count.
    pub k: Option<usize>,
    /// Skip bandwidth selection and use this value.
    pub bandwidth: Option<T>,
    pub scms: ScmsSettings<T>,
    pub frame: FrameOptions,
    pub truncate_k: Option<usize>,
}

impl<T: Scalar> BundleConfig<T> {
    pub fn new(d: usize) -> Self {
        Self {
            d,
            alpha: T::lit(2.0),
            k: None,
            bandwidth: None,
            scms: ScmsSettings::new(d),
            frame: FrameOptions::default(),
            truncate_k: None,
        }
    }
}

/// Effective parameters of a bundle, as recorded in manifests.
#[derive(Debug, Clone, Serialize)]
pub struct BundleParams {
    pub n: usize,
    #[serde(rename = "N")]
    pub n_samples: usize,
    pub d: usize,
    pub c: usize,
    pub k: usize,
    pub h: f64,
    pub alpha: f64,
    pub theta0: f64,
    pub max_iterations: usize,
    pub c_sub: Option<usize>,
    pub truncate_k: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct NormalBundle<T: Scalar> {
    pub source: Dataset<T>,
    /// One entry per sample, index-aligned with `source`.
    pub ridge: Vec<RidgePoint<T>>,
    /// Sample indices of converged ridge points, ascending. Everything below
    /// is indexed by position in this list.
    pub retained: Vec<usize>,
    pub frames: FrameField<T>,
    /// Row `a` holds `E_a^T (x_a - r_a)` for retained point `a`.
    pub normal_coords: DMatrix<T>,
    /// Norm of the part of `x_a - r_a` inside span(V_c) but outside the
    /// aligned subframe; all zeros without a subframe.
    pub residual_norms: Vec<T>,
    pub knn: Vec<Vec<usize>>,
    pub params: BundleParams,
}

impl<T: Scalar> NormalBundle<T> {
    pub fn retained_count(&self) -> usize {
        self.retained.len()
    }

    pub fn excluded_count(&self) -> usize {
        self.ridge.len() - self.retained.len()
    }

    pub fn k(&self) -> usize {
        self.params.k
    }

    /// Ridge point of retained point `a`.
    pub fn ridge_point(&self, a: usize) -> &RidgePoint<T> {
        &self.ridge[self.retained[a]]
    }

    /// Coordinate rows donated to retained point `a`, one per neighbor.
    pub fn donated_coords(&self, a: usize) -> DMatrix<T> {
        let rows = &self.knn[a];
        DMatrix::from_fn(rows.len(), self.normal_coords.ncols(), |r, c| self.normal_coords[(rows[r], c)])
    }

    pub fn warnings(&self) -> Vec<String> {
        let mut w: Vec<String> = self.frames.warnings.iter().map(FrameWarning::to_string).collect();
        if self.excluded_count() > 0 {
            w.push(format!(
                "{} of {} ridge points excluded (not converged or saddle)",
                self.excluded_count(),
                self.ridge.len()
            ));
        }
        w
    }

    pub fn manifest(&self, mode: ConstructionMode) -> BundleManifest {
        BundleManifest {
            params: self.params.clone(),
            retained: self.retained_count(),
            excluded: self.excluded_count(),
            mode,
            min_alignment_cosine: self.frames.min_alignment_cosine.as_f64(),
            warnings: self.warnings(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BundleManifest {
    #[serde(flatten)]
    pub params: BundleParams,
    pub retained: usize,
    pub excluded: usize,
    pub mode: ConstructionMode,
    pub min_alignment_cosine: f64,
    pub warnings: Vec<String>,
}

/// Runs bandwidth selection, ridge estimation, framing, coordinate
/// extraction and ridge k-NN with default settings.
pub fn build_bundle<T: Scalar>(data: &Dataset<T>, d: usize, alpha: T, k: usize) -> Result<NormalBundle<T>> {
    let mut cfg = BundleConfig::new(d);
    cfg.alpha = alpha;
    cfg.k = Some(k);
    build_bundle_with(data, &cfg)
}

pub fn build_bundle_with<T: Scalar>(data: &Dataset<T>, cfg: &BundleConfig<T>) -> Result<NormalBundle<T>> {
    let n = data.dim();
    let mut scms = cfg.scms;
    scms.d = cfg.d;
    scms.validate(n)?;
    if !(cfg.alpha > T::zero()) {
        return Err(NbbError::InvalidParameter(format!("alpha must be positive, got {}", cfg.alpha)));
    }
    let bandwidth = match cfg.bandwidth {
        Some(h) => h,
        None => select_bandwidth(data, cfg.alpha)?,
    };
    let model = KdeModel::new(data.clone(), bandwidth)?.with_truncation(cfg.truncate_k)?;
    let ridge = estimate_ridge(data, &model, &scms)?;
    build_bundle_from_ridge(data, ridge, bandwidth, cfg)
}

/// Assembles a bundle from an already estimated ridge (index-aligned with
/// `data`).
pub fn build_bundle_from_ridge<T: Scalar>(
    data: &Dataset<T>,
    ridge: Vec<RidgePoint<T>>,
    bandwidth: T,
    cfg: &BundleConfig<T>,
) -> Result<NormalBundle<T>> {
    if ridge.len() != data.len() {
        return Err(NbbError::InvalidParameter("one ridge point per sample required".into()));
    }
    let n = data.dim();
    let c = n - cfg.d;
    let retained: Vec<usize> = (0..ridge.len()).filter(|&i| ridge[i].converged()).collect();
    if retained.len() < ridge.len() {
        log::warn!("{} of {} ridge points excluded (not converged or saddle)", ridge.len() - retained.len(), ridge.len());
    }
    let k = cfg.k.unwrap_or_else(|| default_k(retained.len()));
    if k == 0 {
        return Err(NbbError::InvalidParameter("k must be at least 1".into()));
    }
    if k > data.len() {
        return Err(NbbError::KExceedsSampleSize { k, n: data.len() });
    }
    if retained.len() < k {
        return Err(NbbError::InsufficientRidgePoints {
            needed: k,
            available: retained.len(),
        });
    }
    let kept: Vec<RidgePoint<T>> = retained.iter().map(|&i| ridge[i].clone()).collect();
    let frames = smooth_frame(&kept, cfg.frame)?;
    let width = frames.frames[0].ncols();
    let mut normal_coords = DMatrix::zeros(retained.len(), width);
    let mut residual_norms = vec![T::zero(); retained.len()];
    for (a, &i) in retained.iter().enumerate() {
        let offset = data.row(i) - &ridge[i].position;
        let coords = frames.frames[a].transpose() * &offset;
        normal_coords.row_mut(a).copy_from(&coords.transpose());
        if width < c {
            let vc = &ridge[i].frame_vc;
            let in_normal = vc * (vc.transpose() * &offset);
            residual_norms[a] = (in_normal - &frames.frames[a] * coords).norm();
        }
    }
    let positions: Vec<DVector<T>> = kept.iter().map(|r| r.position.clone()).collect();
    let knn = knn_ridge(&positions, k)?;
    let params = BundleParams {
        n,
        n_samples: data.len(),
        d: cfg.d,
        c,
        k,
        h: bandwidth.as_f64(),
        alpha: cfg.alpha.as_f64(),
        theta0: cfg.scms.theta0.as_f64(),
        max_iterations: cfg.scms.max_iterations,
        c_sub: cfg.frame.c_sub,
        truncate_k: cfg.truncate_k,
    };
    Ok(NormalBundle {
        source: data.clone(),
        ridge,
        retained,
        frames,
        normal_coords,
        residual_norms,
        knn,
        params,
    })
}

/// Which vectors are transplanted onto each ridge point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstructionMode {
    /// Neighbor coordinates in the recipient's smooth frame.
    #[default]
    Framed,
    /// Neighbor projection vectors projected onto the recipient's normal space.
    Projected,
    /// Neighbor projection vectors `x_l - r_l` as is.
    Raw,
}

impl std::str::FromStr for ConstructionMode {
    type Err = NbbError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "framed" => Ok(Self::Framed),
            "projected" => Ok(Self::Projected),
            "raw" => Ok(Self::Raw),
            other => Err(NbbError::InvalidParameter(format!("unknown construction mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConstructedData<T: Scalar> {
    /// (N_retained * k) x n, grouped by recipient in retained order.
    pub points: DMatrix<T>,
    /// Sample index of the recipient ridge point for each row.
    pub parent_ridge_index: Vec<usize>,
    /// Sample index of the donor whose coordinates were used.
    pub donor_index: Vec<usize>,
    pub mode: ConstructionMode,
}

impl<T: Scalar> ConstructedData<T> {
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }
}

/// Builds `r_i + E_i n_{K(i, j)}` for every retained point and neighbor.
pub fn construct<T: Scalar>(bundle: &NormalBundle<T>, mode: ConstructionMode) -> Result<ConstructedData<T>> {
    if bundle.frames.c_sub.is_some_and(|cs| cs < bundle.params.c) && mode == ConstructionMode::Framed {
        return Err(NbbError::InvalidParameter(
            "subframe bundles need construct_subframe to fill the remaining normal directions".into(),
        ));
    }
    let n = bundle.params.n;
    let k = bundle.k();
    let offsets: Vec<DVector<T>> = bundle
        .retained
        .iter()
        .map(|&i| bundle.source.row(i) - &bundle.ridge[i].position)
        .collect();
    let blocks: Vec<Vec<DVector<T>>> = (0..bundle.retained_count())
        .into_par_iter()
        .map(|a| {
            let rp = bundle.ridge_point(a);
            bundle.knn[a]
                .iter()
                .map(|&l| match mode {
                    ConstructionMode::Framed => {
                        &rp.position + &bundle.frames.frames[a] * bundle.normal_coords.row(l).transpose()
                    }
                    ConstructionMode::Projected => {
                        let vc = &rp.frame_vc;
                        &rp.position + vc * (vc.transpose() * &offsets[l])
                    }
                    ConstructionMode::Raw => &rp.position + &offsets[l],
                })
                .collect()
        })
        .collect();
    Ok(assemble(bundle, blocks, n, k, mode))
}

fn assemble<T: Scalar>(
    bundle: &NormalBundle<T>,
    blocks: Vec<Vec<DVector<T>>>,
    n: usize,
    k: usize,
    mode: ConstructionMode,
) -> ConstructedData<T> {
    let total = bundle.retained_count() * k;
    let mut points = DMatrix::zeros(total, n);
    let mut parent = Vec::with_capacity(total);
    let mut donor = Vec::with_capacity(total);
    for (a, block) in blocks.into_iter().enumerate() {
        for (j, p) in block.into_iter().enumerate() {
            points.row_mut(a * k + j).copy_from(&p.transpose());
            parent.push(bundle.retained[a]);
            donor.push(bundle.retained[bundle.knn[a][j]]);
        }
    }
    ConstructedData {
        points,
        parent_ridge_index: parent,
        donor_index: donor,
        mode,
    }
}

/// Framed construction for subframe bundles: the aligned subframe carries
/// neighbor coordinates, and the remaining normal directions receive the
/// donor's residual norm along a uniformly random direction.
pub fn construct_subframe<T: Scalar>(bundle: &NormalBundle<T>, rng: RandomSource) -> Result<ConstructedData<T>> {
    let c = bundle.params.c;
    let width = bundle.normal_coords.ncols();
    if width >= c {
        return construct(bundle, ConstructionMode::Framed);
    }
    let n = bundle.params.n;
    let k = bundle.k();
    let blocks: Vec<Vec<DVector<T>>> = (0..bundle.retained_count())
        .into_par_iter()
        .map(|a| {
            let rp = bundle.ridge_point(a);
            let sub = &bundle.frames.frames[a];
            // orthonormal complement of the subframe inside span(V_c)
            let residual_proj = &rp.frame_vc * rp.frame_vc.transpose() - sub * sub.transpose();
            let complement = symmetric_eigen(&residual_proj).top(c - width);
            let mut r = rng.substream(a as u64).rng();
            bundle.knn[a]
                .iter()
                .map(|&l| {
                    let mut dir = DVector::from_fn(c - width, |_, _| T::lit(StandardNormal.sample(&mut r)));
                    let len = dir.norm();
                    if len > T::zero() {
                        dir /= len;
                    } else {
                        dir[0] = T::one();
                    }
                    &rp.position + sub * bundle.normal_coords.row(l).transpose() + &complement * dir * bundle.residual_norms[l]
                })
                .collect()
        })
        .collect();
    Ok(assemble(bundle, blocks, n, k, ConstructionMode::Framed))
}

/// Retained points whose pooled neighbor coordinates look multimodal,
/// suggesting a smaller k there. Index-aligned with `bundle.retained`.
pub fn check_k_unimodality<T: Scalar>(bundle: &NormalBundle<T>) -> Vec<bool> {
    (0..bundle.retained_count())
        .into_par_iter()
        .map(|a| {
            let coords = bundle.donated_coords(a);
            match fiber_mode(&coords, None) {
                Ok(m) => m.mode_count > 1,
                Err(_) => false,
            }
        })
        .collect()
}
