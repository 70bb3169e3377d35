//! Smooth orthonormal frames of the normal bundle over an estimated ridge.
//!
//! Frames are propagated outward from a seed point: the unaligned ridge point
//! closest to any aligned point is rotated (orthogonal Procrustes) toward the
//! frame of that aligned neighbor.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{NbbError, Result};
use crate::ridge::RidgePoint;
use crate::scalar::{sort_scalars, Scalar};

/// Singular values of the cosine matrix below this mean the two fibers are
/// nearly orthogonal and the rotation is ill-determined.
pub const NEAR_ORTHOGONAL: f64 = 1e-8;
/// Minimum alignment cosine below which the normal bundle may not admit a
/// global frame (e.g. a non-orientable ridge).
pub const POOR_ALIGNMENT: f64 = 0.5;
/// Gap, relative to the median nearest-neighbor distance, that marks a
/// break between ridge components.
pub const CHART_BREAK_FACTOR: f64 = 10.0;

#[derive(Debug, Clone)]
pub struct Alignment<T: Scalar> {
    pub frame: DMatrix<T>,
    /// Smallest singular value of the cosine matrix.
    pub min_cosine: T,
}

/// Rotates `e_j` within its own span to best match `e_i` in Frobenius norm.
pub fn align_frame<T: Scalar>(e_j: &DMatrix<T>, e_i: &DMatrix<T>) -> Result<Alignment<T>> {
    if e_j.shape() != e_i.shape() {
        return Err(NbbError::InvalidParameter(format!(
            "frame shapes differ: {:?} vs {:?}",
            e_j.shape(),
            e_i.shape()
        )));
    }
    let theta = e_j.transpose() * e_i;
    let svd = theta.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => unreachable!("SVD requested with both factors"),
    };
    let min_cosine = svd
        .singular_values
        .iter()
        .copied()
        .fold(T::infinity(), |a, b| if b < a { b } else { a });
    let q = u * v_t;
    Ok(Alignment {
        frame: e_j * q,
        min_cosine,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FrameWarning {
    /// The next point to align was far from every aligned point.
    ChartBreak { from: usize, to: usize, distance: f64, median_nn: f64 },
    NearOrthogonal { index: usize, reference: usize, cosine: f64 },
    /// Global alignment quality suggests a nontrivial normal bundle.
    PoorAlignment { min_cosine: f64 },
}

impl std::fmt::Display for FrameWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FrameWarning::ChartBreak { from, to, distance, median_nn } => write!(
                f,
                "chart break: point {to} is {distance:.4} from nearest aligned point {from} (median 1-NN {median_nn:.4})"
            ),
            FrameWarning::NearOrthogonal { index, reference, cosine } => {
                write!(f, "near-orthogonal fibers: point {index} vs {reference}, cosine {cosine:.3e}")
            }
            FrameWarning::PoorAlignment { min_cosine } => {
                write!(f, "poor frame alignment (min cosine {min_cosine:.3}); normal bundle may be nontrivial")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FrameOptions {
    /// Index of the point whose frame is kept as is.
    pub seed: usize,
    /// Align only the first `c_sub` bottom eigenvectors (most negative
    /// eigenvalues). `None` keeps the full normal frame.
    pub c_sub: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct FrameField<T: Scalar> {
    /// One n x c' frame per input point (c' = c, or c_sub when set).
    pub frames: Vec<DMatrix<T>>,
    pub alignment_order: Vec<usize>,
    /// Aligned neighbor each frame was rotated toward (`None` for the seed).
    pub references: Vec<Option<usize>>,
    pub min_alignment_cosine: T,
    pub c_sub: Option<usize>,
    pub warnings: Vec<FrameWarning>,
}

impl<T: Scalar> FrameField<T> {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

fn dist<T: Scalar>(a: &DVector<T>, b: &DVector<T>) -> T {
    (a - b).norm()
}

/// Median over points of the distance to the nearest other point.
fn median_nn_distance<T: Scalar>(positions: &[DVector<T>]) -> T {
    if positions.len() < 2 {
        return T::zero();
    }
    let mut nn: Vec<T> = (0..positions.len())
        .map(|i| {
            (0..positions.len())
                .filter(|&j| j != i)
                .map(|j| dist(&positions[i], &positions[j]))
                .fold(T::infinity(), |a, b| if b < a { b } else { a })
        })
        .collect();
    sort_scalars(&mut nn);
    let m = nn.len();
    if m % 2 == 1 {
        nn[m / 2]
    } else {
        (nn[m / 2 - 1] + nn[m / 2]) * T::lit(0.5)
    }
}

/// Aligns the given per-point frames along the nearest-unaligned recursion.
pub fn smooth_frames<T: Scalar>(positions: &[DVector<T>], frames: &[DMatrix<T>], options: FrameOptions) -> Result<FrameField<T>> {
    let count = positions.len();
    if count == 0 {
        return Err(NbbError::InvalidParameter("smooth frame needs at least one ridge point".into()));
    }
    if frames.len() != count {
        return Err(NbbError::InvalidParameter("one frame per ridge point required".into()));
    }
    if options.seed >= count {
        return Err(NbbError::InvalidParameter(format!("seed index {} out of range", options.seed)));
    }
    let shape = frames[0].shape();
    if frames.iter().any(|f| f.shape() != shape) {
        return Err(NbbError::InvalidParameter("all frames must have the same shape".into()));
    }
    let c = shape.1;
    let width = match options.c_sub {
        Some(cs) if cs == 0 || cs > c => {
            return Err(NbbError::InvalidParameter(format!("c_sub must lie in 1..={c}, got {cs}")));
        }
        Some(cs) => cs,
        None => c,
    };
    let inputs: Vec<DMatrix<T>> = frames.iter().map(|f| f.columns(0, width).into_owned()).collect();

    let median_nn = median_nn_distance(positions);
    let break_at = T::lit(CHART_BREAK_FACTOR) * median_nn;
    let mut out: Vec<Option<DMatrix<T>>> = vec![None; count];
    let mut references = vec![None; count];
    let mut order = Vec::with_capacity(count);
    let mut warnings = Vec::new();
    let mut min_cos = T::one();

    let seed = options.seed;
    out[seed] = Some(inputs[seed].clone());
    order.push(seed);
    // Nearest aligned point and its distance for each unaligned point.
    let mut best: Vec<(T, usize)> = (0..count).map(|j| (dist(&positions[seed], &positions[j]), seed)).collect();

    for _ in 1..count {
        let mut next: Option<usize> = None;
        for j in 0..count {
            if out[j].is_some() {
                continue;
            }
            // strict comparison keeps the smaller index on ties
            if next.is_none_or(|k| best[j].0 < best[k].0) {
                next = Some(j);
            }
        }
        let j = next.expect("an unaligned point remains");
        let (gap, i) = best[j];
        if median_nn > T::zero() && gap > break_at {
            warnings.push(FrameWarning::ChartBreak {
                from: i,
                to: j,
                distance: gap.as_f64(),
                median_nn: median_nn.as_f64(),
            });
        }
        let reference = out[i].as_ref().expect("reference is aligned");
        let aligned = align_frame(&inputs[j], reference)?;
        if aligned.min_cosine < T::lit(NEAR_ORTHOGONAL) {
            warnings.push(FrameWarning::NearOrthogonal {
                index: j,
                reference: i,
                cosine: aligned.min_cosine.as_f64(),
            });
        }
        if aligned.min_cosine < min_cos {
            min_cos = aligned.min_cosine;
        }
        out[j] = Some(aligned.frame);
        references[j] = Some(i);
        order.push(j);
        for k in 0..count {
            if out[k].is_none() {
                let dk = dist(&positions[j], &positions[k]);
                if dk < best[k].0 || (dk == best[k].0 && j < best[k].1) {
                    best[k] = (dk, j);
                }
            }
        }
    }
    if count > 1 && min_cos < T::lit(POOR_ALIGNMENT) {
        warnings.push(FrameWarning::PoorAlignment {
            min_cosine: min_cos.as_f64(),
        });
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(FrameField {
        frames: out.into_iter().map(|f| f.expect("every point aligned")).collect(),
        alignment_order: order,
        references,
        min_alignment_cosine: min_cos,
        c_sub: options.c_sub,
        warnings,
    })
}

/// [`smooth_frames`] over the positions and bottom-c eigenframes of ridge points.
pub fn smooth_frame<T: Scalar>(ridge: &[RidgePoint<T>], options: FrameOptions) -> Result<FrameField<T>> {
    let positions: Vec<DVector<T>> = ridge.iter().map(|r| r.position.clone()).collect();
    let frames: Vec<DMatrix<T>> = ridge.iter().map(|r| r.frame_vc.clone()).collect();
    smooth_frames(&positions, &frames, options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn identical_frames_are_unchanged() {
        let e = dmatrix![1.0f64, 0.0; 0.0, 1.0; 0.0, 0.0];
        let a = align_frame(&e, &e).unwrap();
        assert!((a.frame - &e).norm() < 1e-14);
        assert!((a.min_cosine - 1.0).abs() < 1e-14);
    }

    #[test]
    fn sign_flip_is_corrected() {
        let e = dmatrix![0.6; 0.8];
        let a = align_frame(&(-&e), &e).unwrap();
        assert!((a.frame - &e).norm() < 1e-14);
    }

    #[test]
    fn orthogonal_fibers_are_reported() {
        let positions = vec![DVector::from_vec(vec![0.0, 0.0]), DVector::from_vec(vec![1.0, 0.0])];
        let frames = vec![dmatrix![1.0; 0.0], dmatrix![0.0; 1.0]];
        let f = smooth_frames(&positions, &frames, FrameOptions::default()).unwrap();
        assert!(f.min_alignment_cosine < 1e-8);
        assert!(f.warnings.iter().any(|w| matches!(w, FrameWarning::NearOrthogonal { .. })));
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(align_frame(&dmatrix![1.0; 0.0], &dmatrix![1.0; 0.0; 0.0]).is_err());
    }

    #[test]
    fn two_far_clusters_warn() {
        let mut positions = Vec::new();
        let mut frames = Vec::new();
        for i in 0..6 {
            let x = i as f64 * 0.1;
            positions.push(DVector::from_vec(vec![x, 0.0]));
            positions.push(DVector::from_vec(vec![x + 50.0, 0.0]));
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            frames.push(dmatrix![0.0; s]);
            frames.push(dmatrix![0.0; -s]);
        }
        let f = smooth_frames(&positions, &frames, FrameOptions::default()).unwrap();
        assert_eq!(
            f.warnings.iter().filter(|w| matches!(w, FrameWarning::ChartBreak { .. })).count(),
            1
        );
        for fr in &f.frames {
            assert!((fr[(1, 0)] - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn subframe_keeps_leading_columns() {
        let positions = vec![DVector::from_vec(vec![0.0f64, 0.0, 0.0]), DVector::from_vec(vec![0.1, 0.0, 0.0])];
        let frames = vec![dmatrix![0.0, 0.0; 1.0, 0.0; 0.0, 1.0], dmatrix![0.0, 0.0; -1.0, 0.0; 0.0, 1.0]];
        let opts = FrameOptions { seed: 0, c_sub: Some(1) };
        let f = smooth_frames(&positions, &frames, opts).unwrap();
        assert_eq!(f.frames[1].shape(), (3, 1));
        assert!((f.frames[1][(1, 0)] - 1.0).abs() < 1e-14);
        let bad = FrameOptions { seed: 0, c_sub: Some(3) };
        assert!(smooth_frames(&positions, &frames, bad).is_err());
    }
}
