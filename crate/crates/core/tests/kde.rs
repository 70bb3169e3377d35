mod common;

use common::{circle, random_point};
use nalgebra::{DMatrix, DVector};
use nbb_core::dataset::Dataset;
use nbb_core::kde::{loo_bandwidth, loo_log_likelihood, select_bandwidth, KdeModel};
use nbb_core::RandomSource;
use proptest::prelude::*;

/// Central differences of `log p` and of the analytic gradient.
fn finite_difference(model: &KdeModel<f64>, x: &DVector<f64>, step: f64) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.len();
    let mut grad = DVector::zeros(n);
    let mut hess = DMatrix::zeros(n, n);
    for a in 0..n {
        let mut e = DVector::zeros(n);
        e[a] = step;
        grad[a] = (model.log_density(&(x + &e)) - model.log_density(&(x - &e))) / (2.0 * step);
        let gp = model.eval(&(x + &e)).gradient;
        let gm = model.eval(&(x - &e)).gradient;
        for b in 0..n {
            hess[(b, a)] = (gp[b] - gm[b]) / (2.0 * step);
        }
    }
    (grad, hess)
}

#[test]
fn derivatives_match_finite_differences_on_circle_data() {
    let data = circle(128, 3);
    let h = select_bandwidth(&data, 2.0).unwrap();
    let model = KdeModel::new(data, h).unwrap();
    let mut rng = RandomSource::new(5).rng();
    for _ in 0..20 {
        let x = random_point(2, 1.3, &mut rng);
        let e = model.eval(&x);
        let (g, hs) = finite_difference(&model, &x, 1e-4 * h);
        assert!((&g - &e.gradient).norm() <= 1e-5 * e.gradient.norm(), "gradient at {x}");
        assert!((&hs - &e.hessian).norm() <= 1e-5 * e.hessian.norm(), "hessian at {x}");
        assert!((&e.hessian - e.hessian.transpose()).norm() <= 1e-12 * e.hessian.norm());
    }
}

#[test]
fn loo_objective_matches_direct_sum() {
    let data = circle(40, 8);
    let h: f64 = 0.21;
    let n = data.dim() as f64;
    let norm = (2.0 * std::f64::consts::PI).powf(-n / 2.0) * h.powf(-n);
    let mut expect = 0.0;
    for i in 0..data.len() {
        let mut s = 0.0;
        for j in 0..data.len() {
            if i != j {
                let d2 = (data.row(i) - data.row(j)).norm_squared();
                s += norm * (-d2 / (2.0 * h * h)).exp();
            }
        }
        expect += (s / (data.len() - 1) as f64).ln();
    }
    let got = loo_log_likelihood(&data, h);
    assert!((got - expect).abs() < 1e-10 * expect.abs());
}

#[test]
fn bandwidth_agrees_with_grid_search() {
    let data = circle(128, 7);
    let sigma = data.mean_coordinate_std();
    let (lo, hi) = ((1e-3 * sigma).ln(), (10.0 * sigma).ln());
    let grid: Vec<f64> = (0..200).map(|i| (lo + (hi - lo) * i as f64 / 199.0).exp()).collect();
    let best = grid
        .iter()
        .copied()
        .max_by(|&a, &b| loo_log_likelihood(&data, a).partial_cmp(&loo_log_likelihood(&data, b)).unwrap())
        .unwrap();
    let h = select_bandwidth(&data, 2.0).unwrap();
    assert!((h - 2.0 * best).abs() <= 0.05 * 2.0 * best, "h = {h}, grid = {}", 2.0 * best);
}

#[test]
fn oversmoothing_scales_exactly() {
    let data = circle(64, 1);
    let h1 = loo_bandwidth(&data).unwrap();
    for alpha in [1.0, 2.0, 3.5] {
        assert_eq!(select_bandwidth(&data, alpha).unwrap(), alpha * h1);
    }
    let two = Dataset::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
    let h: f64 = select_bandwidth(&two, 2.0).unwrap();
    assert!((h - 2.0).abs() < 2e-3);
}

#[test]
fn translation_equivariance() {
    let data = circle(50, 2);
    let shift = DVector::from_vec(vec![3.5, -1.25]);
    let moved = Dataset::new(DMatrix::from_fn(50, 2, |i, j| data.points()[(i, j)] + shift[j])).unwrap();
    let a = KdeModel::new(data, 0.3).unwrap();
    let b = KdeModel::new(moved, 0.3).unwrap();
    let mut rng = RandomSource::new(4).rng();
    for _ in 0..10 {
        let x = random_point(2, 1.5, &mut rng);
        let ea = a.eval(&x);
        let eb = b.eval(&(&x + &shift));
        assert!((ea.log_density - eb.log_density).abs() < 1e-12);
        assert!((ea.gradient - eb.gradient).norm() < 1e-12 * (1.0 + a.eval(&x).gradient.norm()));
        assert!((ea.hessian - eb.hessian).norm() < 1e-12 * (1.0 + a.eval(&x).hessian.norm()));
    }
}

#[test]
fn truncated_sums_approach_exact_sums() {
    let data = circle(200, 6);
    let exact = KdeModel::new(data.clone(), 0.15).unwrap();
    let trunc = KdeModel::new(data, 0.15).unwrap().with_truncation(Some(60)).unwrap();
    let x = DVector::from_vec(vec![0.9, 0.2]);
    let (a, b) = (exact.eval(&x), trunc.eval(&x));
    assert!((&a.gradient - &b.gradient).norm() < 1e-6 * a.gradient.norm().max(1.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn hessian_is_symmetric_and_finite(
        pts in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), 2..12),
        q in prop::collection::vec(-3.0f64..3.0, 3),
        h in 0.05f64..2.0,
    ) {
        let data = Dataset::from_rows(&pts).unwrap();
        let model = KdeModel::new(data, h).unwrap();
        let e = model.eval(&DVector::from_vec(q));
        prop_assert!(e.valid);
        prop_assert!(e.log_density.is_finite());
        prop_assert!(e.gradient.iter().all(|v| v.is_finite()));
        let asym = (&e.hessian - e.hessian.transpose()).norm();
        prop_assert!(asym <= 1e-12 * e.hessian.norm().max(1e-300));
        prop_assert!(e.hessian.symmetric_eigenvalues().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn mean_shift_points_into_the_convex_hull(
        pts in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 2), 3..10),
        q in prop::collection::vec(-4.0f64..4.0, 2),
        h in 0.1f64..1.0,
    ) {
        let data = Dataset::from_rows(&pts).unwrap();
        let model = KdeModel::new(data, h).unwrap();
        let x = DVector::from_vec(q);
        let target = &x + model.eval(&x).mean_shift(h);
        // the mean-shift target is a weighted average of the samples
        prop_assert!(target.iter().all(|v| *v >= -1.0 - 1e-9 && *v <= 1.0 + 1e-9));
    }
}
