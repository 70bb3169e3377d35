//! Seeded generators for the benchmark datasets and their true ridges.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{NbbError, Result};
use crate::linalg::orthonormalize;
use crate::rng::RandomSource;
use crate::scalar::Scalar;

/// Fiber intersections farther than this from the ridge point are ignored.
pub const MAX_FIBER_DISTANCE: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticModel {
    /// Uniform angle, radius `N(1, sigma^2)`. True ridge: the unit circle.
    Circle { sigma: f64 },
    /// `(t, t^2)` with `t ~ U[-1, 1]` plus isotropic noise. True ridge: the
    /// parabola segment.
    Parabola { sigma: f64 },
    /// `N(mean, cov)`. True 1-d ridge: the first principal axis.
    GaussianBlob { mean: Vec<f64>, cov: Vec<Vec<f64>> },
    /// Rotating discretized circle: rows `(theta, x_1, y_1, ..., x_l, y_l)`
    /// with `(x_j, y_j) = (cos pi(theta + gamma_j), sin pi(theta + gamma_j))`.
    Wheel {
        sigma: f64,
        phases: Vec<f64>,
        theta_range: (f64, f64),
    },
}

impl SyntheticModel {
    pub fn circle(sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        Ok(Self::Circle { sigma })
    }

    pub fn parabola(sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        Ok(Self::Parabola { sigma })
    }

    pub fn gaussian_blob(mean: Vec<f64>, cov: Vec<Vec<f64>>) -> Result<Self> {
        let n = mean.len();
        if n < 2 || cov.len() != n || cov.iter().any(|r| r.len() != n) {
            return Err(NbbError::InvalidParameter("blob needs n >= 2 and an n x n covariance".into()));
        }
        let m = DMatrix::from_fn(n, n, |i, j| cov[i][j]);
        if (&m - m.transpose()).norm() > 1e-12 || m.cholesky().is_none() {
            return Err(NbbError::InvalidParameter("blob covariance must be symmetric positive definite".into()));
        }
        Ok(Self::GaussianBlob { mean, cov })
    }

    /// Draws `l` phases `gamma_j ~ U[0, 2)` once for the model.
    pub fn wheel(l: usize, sigma: f64, theta_range: (f64, f64), rng: RandomSource) -> Result<Self> {
        check_sigma(sigma)?;
        if l < 2 {
            return Err(NbbError::InvalidParameter(format!("wheel needs l >= 2 points, got {l}")));
        }
        if !(theta_range.1 > theta_range.0) {
            return Err(NbbError::InvalidParameter("theta range must be increasing".into()));
        }
        let mut r = rng.rng();
        let phases = (0..l).map(|_| r.random_range(0.0..2.0)).collect();
        Ok(Self::Wheel {
            sigma,
            phases,
            theta_range,
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Circle { .. } | Self::Parabola { .. } => 2,
            Self::GaussianBlob { mean, .. } => mean.len(),
            Self::Wheel { phases, .. } => 1 + 2 * phases.len(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Circle { .. } => "circle",
            Self::Parabola { .. } => "parabola",
            Self::GaussianBlob { .. } => "gaussian_blob",
            Self::Wheel { .. } => "wheel",
        }
    }

    /// Column names for generated data.
    pub fn columns(&self) -> Vec<String> {
        match self {
            Self::Wheel { phases, .. } => {
                let mut c = vec!["theta".to_string()];
                for j in 1..=phases.len() {
                    c.push(format!("x_{j}"));
                    c.push(format!("y_{j}"));
                }
                c
            }
            _ => (1..=self.dim()).map(|j| format!("x_{j}")).collect(),
        }
    }

    /// Noiseless wheel configuration at rotation `theta`.
    pub fn wheel_point(phases: &[f64], theta: f64) -> DVector<f64> {
        let mut v = Vec::with_capacity(1 + 2 * phases.len());
        v.push(theta);
        for g in phases {
            let a = PI * (theta + g);
            v.push(a.cos());
            v.push(a.sin());
        }
        DVector::from_vec(v)
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(NbbError::InvalidParameter(format!("noise sigma must be positive, got {sigma}")))
    }
}

/// Draws `n_samples` rows from the model.
pub fn generate<T: Scalar>(model: &SyntheticModel, n_samples: usize, rng: RandomSource) -> Result<Dataset<T>> {
    if n_samples < 2 {
        return Err(NbbError::InvalidParameter(format!("need N >= 2, got {n_samples}")));
    }
    let mut r = rng.rng();
    let dim = model.dim();
    let mut out = DMatrix::<f64>::zeros(n_samples, dim);
    match model {
        SyntheticModel::Circle { sigma } => {
            let angle = Uniform::new(0.0, 2.0 * PI).expect("valid range");
            let radius = Normal::new(1.0, *sigma).expect("valid sigma");
            for i in 0..n_samples {
                let t: f64 = angle.sample(&mut r);
                let rad: f64 = radius.sample(&mut r);
                out[(i, 0)] = rad * t.cos();
                out[(i, 1)] = rad * t.sin();
            }
        }
        SyntheticModel::Parabola { sigma } => {
            let param = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
            for i in 0..n_samples {
                let t: f64 = param.sample(&mut r);
                let e0: f64 = StandardNormal.sample(&mut r);
                let e1: f64 = StandardNormal.sample(&mut r);
                out[(i, 0)] = t + sigma * e0;
                out[(i, 1)] = t * t + sigma * e1;
            }
        }
        SyntheticModel::GaussianBlob { mean, cov } => {
            let m = DMatrix::from_fn(dim, dim, |i, j| cov[i][j]);
            let l = m.cholesky().expect("validated at construction").l();
            for i in 0..n_samples {
                let z = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut r));
                let x = &l * z;
                for j in 0..dim {
                    out[(i, j)] = mean[j] + x[j];
                }
            }
        }
        SyntheticModel::Wheel {
            sigma,
            phases,
            theta_range,
        } => {
            let param = Uniform::new(theta_range.0, theta_range.1).expect("valid range");
            for i in 0..n_samples {
                let theta: f64 = param.sample(&mut r);
                let clean = SyntheticModel::wheel_point(phases, theta);
                for j in 0..dim {
                    let e: f64 = StandardNormal.sample(&mut r);
                    out[(i, j)] = clean[j] + sigma * e;
                }
            }
        }
    }
    Dataset::with_columns(out.map(T::lit), model.columns())
}

/// The true-ridge point in the affine normal space `ridge_point + span(frame)`
/// nearest to `ridge_point`, or `None` if there is no intersection within
/// [`MAX_FIBER_DISTANCE`]. Requires a 1-d true ridge, so `frame` must have
/// `n - 1` columns.
pub fn true_fiber_point<T: Scalar>(model: &SyntheticModel, ridge_point: &DVector<T>, normal_frame: &DMatrix<T>) -> Option<DVector<T>> {
    let r = ridge_point.map(|v| v.as_f64());
    let e = normal_frame.map(|v| v.as_f64());
    let n = r.len();
    if e.nrows() != n || e.ncols() + 1 != n || n != model.dim() {
        return None;
    }
    let hit = match model {
        SyntheticModel::Circle { .. } => circle_fiber_point(&r, &e),
        SyntheticModel::GaussianBlob { mean, cov } => {
            let m = DMatrix::from_fn(n, n, |i, j| cov[i][j]);
            let eig = crate::linalg::symmetric_eigen(&m);
            let axis = eig.vectors.column(n - 1).into_owned();
            line_fiber_point(&DVector::from_column_slice(mean), &axis, &r, &e)
        }
        SyntheticModel::Parabola { .. } => {
            curve_fiber_point(|t| DVector::from_vec(vec![t, t * t]), (-1.0, 1.0), &r, &e)
        }
        SyntheticModel::Wheel {
            phases, theta_range, ..
        } => curve_fiber_point(|t| SyntheticModel::wheel_point(phases, t), *theta_range, &r, &e),
    }?;
    if (&hit - &r).norm() <= MAX_FIBER_DISTANCE {
        Some(hit.map(T::lit))
    } else {
        None
    }
}

/// Unit vector orthogonal to the columns of an n x (n-1) orthonormal frame.
fn tangent_of(frame: &DMatrix<f64>) -> DVector<f64> {
    let n = frame.nrows();
    let mut aug = DMatrix::zeros(n, n);
    aug.columns_mut(0, n - 1).copy_from(&orthonormalize(frame));
    // a generic direction, orthonormalized against the frame
    aug.set_column(n - 1, &DVector::from_fn(n, |i, _| 1.0 + 0.1 * i as f64));
    orthonormalize(&aug).column(n - 1).into_owned()
}

fn circle_fiber_point(r: &DVector<f64>, e: &DMatrix<f64>) -> Option<DVector<f64>> {
    // line r + t u, |r + t u|^2 = 1
    let u = e.column(0).into_owned();
    let b = r.dot(&u);
    let disc = b * b - (r.norm_squared() - 1.0);
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    let (t1, t2) = (-b + s, -b - s);
    // smaller |t|; on exact ties the positive root
    let t = if t1.abs() <= t2.abs() { t1 } else { t2 };
    Some(r + u * t)
}

fn line_fiber_point(p0: &DVector<f64>, axis: &DVector<f64>, r: &DVector<f64>, e: &DMatrix<f64>) -> Option<DVector<f64>> {
    // p0 + s axis lies in r + span(e)  <=>  tangent . (p0 + s axis - r) = 0
    let tau = tangent_of(e);
    let denom = tau.dot(axis);
    if denom.abs() < 1e-12 {
        return None;
    }
    let s = tau.dot(&(r - p0)) / denom;
    Some(p0 + axis * s)
}

/// Roots of `tangent . (curve(t) - r)` on `range`, by a dense sign scan
/// followed by bisection; returns the root nearest to `r`.
fn curve_fiber_point(curve: impl Fn(f64) -> DVector<f64>, range: (f64, f64), r: &DVector<f64>, e: &DMatrix<f64>) -> Option<DVector<f64>> {
    const GRID: usize = 2000;
    let tau = tangent_of(e);
    let f = |t: f64| tau.dot(&(curve(t) - r));
    let (lo, hi) = range;
    let step = (hi - lo) / GRID as f64;
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut consider = |t: f64| {
        let p = curve(t);
        let dist = (&p - r).norm();
        if best.as_ref().is_none_or(|(d, _)| dist < *d) {
            best = Some((dist, p));
        }
    };
    let mut prev_t = lo;
    let mut prev_f = f(lo);
    if prev_f == 0.0 {
        consider(lo);
    }
    for k in 1..=GRID {
        let t = lo + step * k as f64;
        let ft = f(t);
        if ft == 0.0 {
            consider(t);
        } else if prev_f != 0.0 && ft.signum() != prev_f.signum() {
            let (mut a, mut b, mut fa) = (prev_t, t, prev_f);
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                let fm = f(mid);
                if fm == 0.0 || (b - a) < 1e-15 {
                    a = mid;
                    b = mid;
                    break;
                }
                if fm.signum() == fa.signum() {
                    a = mid;
                    fa = fm;
                } else {
                    b = mid;
                }
            }
            consider(0.5 * (a + b));
        }
        prev_t = t;
        prev_f = ft;
    }
    best.map(|(_, p)| p)
}
