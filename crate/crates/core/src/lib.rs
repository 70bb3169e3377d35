//! Normal-bundle bootstrap.
//!
//! Estimates the d-dimensional density ridge of a point cloud by
//! subspace-constrained mean shift on a Gaussian log-KDE, builds a smooth
//! orthonormal frame of its normal bundle, and resamples the data by moving
//! normal-space coordinates between neighboring ridge points. The constructed
//! data feed pointwise confidence sets for the ridge and data augmentation.
//!
//! Every numerical type is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common `f64` instantiation.

// NaN must fail parameter checks, so they are written as negated comparisons.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod frame;
pub mod inference;
pub mod io;
pub mod kde;
pub mod linalg;
pub mod nbb;
pub mod ridge;
pub mod rng;
pub mod scalar;
pub mod stats;
pub mod synthetic;

pub use error::{NbbError, Result};
pub use rng::RandomSource;
pub use scalar::Scalar;

pub type Dataset = dataset::Dataset<f64>;
pub type KdeModel = kde::KdeModel<f64>;
pub type DensityEval = kde::DensityEval<f64>;
pub type RidgePoint = ridge::RidgePoint<f64>;
pub type ScmsSettings = ridge::ScmsSettings<f64>;
pub type FrameField = frame::FrameField<f64>;
pub type NormalBundle = nbb::NormalBundle<f64>;
pub type ConstructedData = nbb::ConstructedData<f64>;
pub type ConfidenceSet = inference::ConfidenceSet<f64>;

pub type DatasetF32 = dataset::Dataset<f32>;
pub type KdeModelF32 = kde::KdeModel<f32>;
pub type RidgePointF32 = ridge::RidgePoint<f32>;
pub type NormalBundleF32 = nbb::NormalBundle<f32>;
