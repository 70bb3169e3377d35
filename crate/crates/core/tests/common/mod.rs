#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use nbb_core::dataset::Dataset;
use nbb_core::synthetic::{generate, SyntheticModel};
use nbb_core::RandomSource;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn circle(n: usize, seed: u64) -> Dataset<f64> {
    generate(&SyntheticModel::circle(0.2).unwrap(), n, RandomSource::new(seed)).unwrap()
}

/// Random orthonormal n x c matrix from QR of a Gaussian matrix.
pub fn random_frame(n: usize, c: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, c, |_, _| rng.sample::<f64, _>(StandardNormal));
    g.qr().q().columns(0, c).into_owned()
}

/// Random rotation in O(c) (proper or not).
pub fn random_orthogonal(c: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    random_frame(c, c, rng)
}

pub fn random_point(n: usize, scale: f64, rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}
