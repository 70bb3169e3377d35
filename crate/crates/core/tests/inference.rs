mod common;

use common::circle;
use nalgebra::DMatrix;
use nbb_core::dataset::Dataset;
use nbb_core::inference::{bootstrap_confidence_set, fiber_mode, nbb_confidence_set, NbbSetConfig};
use nbb_core::kde::select_bandwidth;
use nbb_core::nbb::build_bundle;
use nbb_core::ridge::ScmsSettings;
use nbb_core::stats::{mean, std_dev};
use nbb_core::RandomSource;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

fn kde_1d(sample: &[f64], h: f64, y: f64) -> f64 {
    sample.iter().map(|x| (-0.5 * ((y - x) / h).powi(2)).exp()).sum()
}

#[test]
fn skewed_mode_matches_grid_argmax() {
    let mut rng = RandomSource::new(21).rng();
    let gamma = Gamma::new(2.0, 1.0).unwrap();
    let sample: Vec<f64> = (0..300).map(|_| gamma.sample(&mut rng)).collect();
    let coords = DMatrix::from_column_slice(sample.len(), 1, &sample);
    let m = fiber_mode(&coords, None).unwrap();
    let h = m.bandwidth[0];
    let (lo, hi) = (0.0, 10.0);
    let steps = 100_000;
    let grid_best = (0..=steps)
        .map(|i| lo + (hi - lo) * i as f64 / steps as f64)
        .max_by(|a, b| kde_1d(&sample, h, *a).total_cmp(&kde_1d(&sample, h, *b)))
        .unwrap();
    let sigma = std_dev(&sample);
    assert!((m.mode[0] - grid_best).abs() < 0.05 * sigma, "{} vs {grid_best}", m.mode[0]);
    assert!(m.mode[0] < mean(&sample));
}

#[test]
fn gaussian_quantiles_have_one_mode() {
    // normal quantiles by bisection on the error function
    let n = 16;
    let quantiles: Vec<f64> = (0..n)
        .map(|i| {
            let p = (i as f64 + 0.5) / n as f64;
            let (mut lo, mut hi) = (-10.0, 10.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if 0.5 * (1.0 + erf(mid / 2f64.sqrt())) < p {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        })
        .collect();
    let m = fiber_mode(&DMatrix::from_column_slice(n, 1, &quantiles), None).unwrap();
    assert_eq!(m.mode_count, 1);
    assert!(m.mode[0].abs() < 1e-8);
}

// Maclaurin series, accurate to roundoff for |x| < 3.
fn erf(x: f64) -> f64 {
    if x.abs() < 3.0 {
        let mut term = x;
        let mut sum = x;
        for k in 1..200 {
            term *= -x * x / k as f64;
            sum += term / (2 * k + 1) as f64;
        }
        2.0 / std::f64::consts::PI.sqrt() * sum
    } else {
        x.signum()
    }
}

#[test]
fn two_dimensional_mode_finds_the_heavier_cluster() {
    let mut rng = RandomSource::new(5).rng();
    let mut rows = Vec::new();
    for i in 0..90 {
        let (cx, cy) = if i < 60 { (1.0, 1.0) } else { (-1.0, 0.0) };
        rows.push(cx + rng.random_range(-0.1..0.1));
        rows.push(cy + rng.random_range(-0.1..0.1));
    }
    let coords: DMatrix<f64> = DMatrix::from_row_slice(90, 2, &rows);
    let m = fiber_mode(&coords, None).unwrap();
    assert!((m.mode[0] - 1.0).abs() < 0.1 && (m.mode[1] - 1.0).abs() < 0.1);
    assert_eq!(m.mode_count, 2);
}

#[test]
fn constant_fibers_give_zero_radius() {
    let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64 * 0.1, 0.5 * i as f64 * 0.1]).collect();
    let data = Dataset::from_rows(&rows).unwrap();
    let bundle = build_bundle(&data, 1, 2.0, 4).unwrap();
    let set = nbb_confidence_set(&bundle, &NbbSetConfig::new(0.9, 50), RandomSource::new(1)).unwrap();
    assert!(set.disks.iter().all(|d| d.radius.abs() < 1e-6));
}

#[test]
fn radius_is_monotone_in_level_and_stable_in_b() {
    let data = circle(64, 2);
    let bundle = build_bundle(&data, 1, 2.0, 8).unwrap();
    let run = |level: f64, b: usize| {
        nbb_confidence_set(&bundle, &NbbSetConfig::new(level, b), RandomSource::new(77)).unwrap().disks[0].radius
    };
    let full = run(0.9, 200);
    assert!(run(0.45, 200) <= full);
    assert!(full > 0.0);
    let doubled = run(0.9, 400);
    assert!((doubled - full).abs() / full < 0.1, "{full} vs {doubled}");
}

#[test]
fn bootstrap_set_has_positive_radius() {
    let data = circle(64, 4);
    let h = select_bandwidth(&data, 2.0).unwrap();
    let set = bootstrap_confidence_set(&data, &ScmsSettings::new(1), h, 0.9, 50, RandomSource::new(3)).unwrap();
    assert!(!set.disks.is_empty());
    assert!(set.disks.iter().all(|d| d.radius > 0.0 && d.radius == set.disks[0].radius));
    for d in &set.disks {
        assert!(d.contains(&d.center));
    }
}

#[test]
fn nbb_sets_are_reproducible() {
    let data = circle(48, 6);
    let bundle = build_bundle(&data, 1, 2.0, 6).unwrap();
    let cfg = NbbSetConfig::new(0.9, 60);
    let a = nbb_confidence_set(&bundle, &cfg, RandomSource::new(9)).unwrap();
    let b = nbb_confidence_set(&bundle, &cfg, RandomSource::new(9)).unwrap();
    for (x, y) in a.disks.iter().zip(&b.disks) {
        assert_eq!(x.radius.to_bits(), y.radius.to_bits());
        assert_eq!(x.mode, y.mode);
    }
}
