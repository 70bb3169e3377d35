//! Gaussian kernel density estimation on the log scale.
//!
//! The estimate is
//! `p(x) = N^-1 sum_i (2 pi)^(-n/2) h^(-n) exp(-|x - x_i|^2 / (2 h^2))`
//! and every derivative exposed here is a derivative of `log p`. With
//! `z_i = (x_i - x) / h` and softmax weights `w_i` of `-|z_i|^2 / 2`:
//!
//! * gradient `= (sum_i w_i z_i) / h`
//! * Hessian `= (sum_i w_i z_i z_i^T - s s^T - I) / h^2`, `s = sum_i w_i z_i`
//!
//! Sums are taken relative to the largest exponent so the log-density never
//! underflows for finite inputs.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{NbbError, Result};
use crate::scalar::Scalar;

/// A Gaussian KDE with fixed isotropic bandwidth.
#[derive(Debug, Clone)]
pub struct KdeModel<T: Scalar> {
    data: Dataset<T>,
    bandwidth: T,
    truncate_k: Option<usize>,
    /// Row-major copy of the sample for cache-friendly kernel sums.
    rows: Vec<T>,
}

/// Log-density with its first and second derivatives at one query point.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityEval<T: Scalar> {
    pub log_density: T,
    pub gradient: DVector<T>,
    pub hessian: DMatrix<T>,
    /// `false` when the log-density is not finite; gradient and Hessian are
    /// then zero and must not be used.
    pub valid: bool,
}

impl<T: Scalar> DensityEval<T> {
    /// Mean-shift vector `h^2 * grad log p`.
    pub fn mean_shift(&self, bandwidth: T) -> DVector<T> {
        &self.gradient * (bandwidth * bandwidth)
    }
}

/// Third derivative of `log p` as weighted centered offsets.
#[derive(Debug, Clone)]
pub struct ThirdDerivative<T: Scalar> {
    weights: Vec<T>,
    centered: DMatrix<T>,
    bandwidth: T,
}

impl<T: Scalar> ThirdDerivative<T> {
    /// `T(a, b, c) = sum_i w_i (z_i.a)(z_i.b)(z_i.c) / h^3` with centered `z_i`.
    pub fn contract(&self, a: &DVector<T>, b: &DVector<T>, c: &DVector<T>) -> T {
        let pa = &self.centered * a;
        let pb = &self.centered * b;
        let pc = &self.centered * c;
        let mut acc = T::zero();
        for (i, &w) in self.weights.iter().enumerate() {
            acc += w * pa[i] * pb[i] * pc[i];
        }
        let h = self.bandwidth;
        acc / (h * h * h)
    }

    /// Directional derivative of the Hessian along `v`.
    pub fn hessian_derivative(&self, v: &DVector<T>) -> DMatrix<T> {
        let pv = &self.centered * v;
        let n = self.centered.ncols();
        let mut out = DMatrix::<T>::zeros(n, n);
        for (i, &w) in self.weights.iter().enumerate() {
            let zi = self.centered.row(i).transpose();
            out += &zi * zi.transpose() * (w * pv[i]);
        }
        let h = self.bandwidth;
        out / (h * h * h)
    }
}

impl<T: Scalar> KdeModel<T> {
    pub fn new(data: Dataset<T>, bandwidth: T) -> Result<Self> {
        if !(bandwidth > T::zero()) || !bandwidth.is_finite_value() {
            return Err(NbbError::InvalidParameter(format!(
                "bandwidth must be positive and finite, got {bandwidth}"
            )));
        }
        let (n_rows, n_cols) = data.points().shape();
        let rows = (0..n_rows)
            .flat_map(|i| (0..n_cols).map(move |j| (i, j)))
            .map(|(i, j)| data.points()[(i, j)])
            .collect();
        Ok(Self {
            data,
            bandwidth,
            truncate_k: None,
            rows,
        })
    }

    /// Restricts every kernel sum to the `k` nearest sample points of the
    /// query. `None` (the default) sums over the whole sample.
    pub fn with_truncation(mut self, truncate_k: Option<usize>) -> Result<Self> {
        if let Some(k) = truncate_k {
            if k == 0 || k > self.data.len() {
                return Err(NbbError::InvalidParameter(format!(
                    "truncate_k must lie in 1..={}, got {k}",
                    self.data.len()
                )));
            }
        }
        self.truncate_k = truncate_k;
        Ok(self)
    }

    pub fn data(&self) -> &Dataset<T> {
        &self.data
    }

    pub fn bandwidth(&self) -> T {
        self.bandwidth
    }

    pub fn truncate_k(&self) -> Option<usize> {
        self.truncate_k
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    #[inline]
    fn sample(&self, i: usize) -> &[T] {
        let n = self.dim();
        &self.rows[i * n..(i + 1) * n]
    }

    fn log_normalizer(&self) -> T {
        let n = T::from_usize_lossy(self.dim());
        let two_pi = T::two_pi();
        -(T::from_usize_lossy(self.data.len())).ln() - n / T::lit(2.0) * two_pi.ln() - n * self.bandwidth.ln()
    }

    /// Kernel exponents `-|x - x_i|^2 / (2 h^2)` for the active sample points.
    fn exponents(&self, x: &[T]) -> (Vec<usize>, Vec<T>) {
        let inv = T::one() / (T::lit(2.0) * self.bandwidth * self.bandwidth);
        let all: Vec<T> = (0..self.data.len())
            .map(|i| {
                let d2 = self
                    .sample(i)
                    .iter()
                    .zip(x)
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .fold(T::zero(), |acc, v| acc + v);
                -d2 * inv
            })
            .collect();
        match self.truncate_k {
            Some(k) if k < all.len() => {
                let mut idx: Vec<usize> = (0..all.len()).collect();
                // largest exponent = nearest point; ties by index
                idx.select_nth_unstable_by(k - 1, |&a, &b| {
                    all[b].partial_cmp(&all[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
                });
                idx.truncate(k);
                idx.sort_unstable();
                let e = idx.iter().map(|&i| all[i]).collect();
                (idx, e)
            }
            _ => ((0..all.len()).collect(), all),
        }
    }

    /// `log p(x)` only.
    pub fn log_density(&self, x: &DVector<T>) -> T {
        let (_, e) = self.exponents(x.as_slice());
        log_sum_exp(&e) + self.log_normalizer()
    }

    /// Log-density, gradient and Hessian of `log p` at `x`.
    pub fn eval(&self, x: &DVector<T>) -> DensityEval<T> {
        let n = self.dim();
        assert_eq!(x.len(), n, "query dimension mismatch");
        let h = self.bandwidth;
        let (idx, e) = self.exponents(x.as_slice());
        let emax = e.iter().copied().fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
        let invalid = || DensityEval {
            log_density: T::neg_infinity(),
            gradient: DVector::zeros(n),
            hessian: DMatrix::zeros(n, n),
            valid: false,
        };
        if !emax.is_finite_value() {
            return invalid();
        }
        let w: Vec<T> = e.iter().map(|&v| (v - emax).exp()).collect();
        let total = w.iter().copied().fold(T::zero(), |a, b| a + b);
        let log_density = emax + total.ln() + self.log_normalizer();
        if !log_density.is_finite_value() {
            return invalid();
        }

        let mut s = DVector::<T>::zeros(n);
        let mut m = DMatrix::<T>::zeros(n, n);
        let mut z = vec![T::zero(); n];
        for (&i, &wi) in idx.iter().zip(&w) {
            let p = wi / total;
            if p == T::zero() {
                continue;
            }
            for (zj, (&xi, &xq)) in z.iter_mut().zip(self.sample(i).iter().zip(x.iter())) {
                *zj = (xi - xq) / h;
            }
            for a in 0..n {
                let pa = p * z[a];
                s[a] += pa;
                for b in a..n {
                    m[(a, b)] += pa * z[b];
                }
            }
        }
        let h2 = h * h;
        let mut hess = DMatrix::<T>::zeros(n, n);
        for a in 0..n {
            for b in a..n {
                let mut v = m[(a, b)] - s[a] * s[b];
                if a == b {
                    v -= T::one();
                }
                hess[(a, b)] = v / h2;
                hess[(b, a)] = v / h2;
            }
        }
        DensityEval {
            log_density,
            gradient: s / h,
            hessian: hess,
            valid: true,
        }
    }

    /// Third derivative tensor of `log p` at `x`, kept in factored form.
    ///
    /// `log p` is a cumulant generating function in `x / h^2` up to a
    /// quadratic, so the tensor is the third central moment of the `z_i`
    /// under the softmax weights, divided by `h^3`. Returns `None` where the
    /// density underflows.
    pub fn third_derivative(&self, x: &DVector<T>) -> Option<ThirdDerivative<T>> {
        let n = self.dim();
        assert_eq!(x.len(), n, "query dimension mismatch");
        let h = self.bandwidth;
        let (idx, e) = self.exponents(x.as_slice());
        let emax = e.iter().copied().fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
        if !emax.is_finite_value() {
            return None;
        }
        let w: Vec<T> = e.iter().map(|&v| (v - emax).exp()).collect();
        let total = w.iter().copied().fold(T::zero(), |a, b| a + b);
        let mut weights = Vec::with_capacity(idx.len());
        let mut z = DMatrix::<T>::zeros(idx.len(), n);
        for (r, (&i, &wi)) in idx.iter().zip(&w).enumerate() {
            weights.push(wi / total);
            for (a, (&xi, &xq)) in self.sample(i).iter().zip(x.iter()).enumerate() {
                z[(r, a)] = (xi - xq) / h;
            }
        }
        let mut s = DVector::<T>::zeros(n);
        for (r, &p) in weights.iter().enumerate() {
            s += z.row(r).transpose() * p;
        }
        for r in 0..z.nrows() {
            for a in 0..n {
                z[(r, a)] -= s[a];
            }
        }
        Some(ThirdDerivative { weights, centered: z, bandwidth: h })
    }

    /// Evaluates at every row of `queries`, in row order.
    pub fn eval_many(&self, queries: &DMatrix<T>) -> Vec<DensityEval<T>> {
        (0..queries.nrows())
            .into_par_iter()
            .map(|i| self.eval(&queries.row(i).transpose()))
            .collect()
    }
}

pub(crate) fn log_sum_exp<T: Scalar>(values: &[T]) -> T {
    let max = values.iter().copied().fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
    if !max.is_finite_value() {
        return max;
    }
    let sum = values.iter().map(|&v| (v - max).exp()).fold(T::zero(), |a, b| a + b);
    max + sum.ln()
}

/// Leave-one-out log-likelihood `sum_i log p_{h,-i}(x_i)` with the
/// normalized Gaussian kernel.
pub fn loo_log_likelihood<T: Scalar>(data: &Dataset<T>, bandwidth: T) -> T {
    let n_samples = data.len();
    let dim = T::from_usize_lossy(data.dim());
    let pts = data.points();
    let inv = T::one() / (T::lit(2.0) * bandwidth * bandwidth);
    let per_point: Vec<T> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let e: Vec<T> = (0..n_samples)
                .filter(|&j| j != i)
                .map(|j| {
                    let d2 = (0..data.dim())
                        .map(|c| {
                            let d = pts[(i, c)] - pts[(j, c)];
                            d * d
                        })
                        .fold(T::zero(), |a, b| a + b);
                    -d2 * inv
                })
                .collect();
            log_sum_exp(&e)
        })
        .collect();
    let sum = per_point.into_iter().fold(T::zero(), |a, b| a + b);
    let nn = T::from_usize_lossy(n_samples);
    sum - nn * (T::from_usize_lossy(n_samples - 1)).ln()
        - nn * dim / T::lit(2.0) * T::two_pi().ln()
        - nn * dim * bandwidth.ln()
}

/// Bracket and tolerance of the golden-section search, in `log h`.
const BRACKET_LO: f64 = 1e-3;
const BRACKET_HI: f64 = 1e1;
const LOG_H_TOL: f64 = 1e-4;

/// Maximum-likelihood (leave-one-out) bandwidth multiplied by the
/// oversmoothing factor `alpha`.
pub fn select_bandwidth<T: Scalar>(data: &Dataset<T>, alpha: T) -> Result<T> {
    if !(alpha > T::zero()) || !alpha.is_finite_value() {
        return Err(NbbError::InvalidParameter(format!("alpha must be positive, got {alpha}")));
    }
    Ok(alpha * loo_bandwidth(data)?)
}

/// The unscaled leave-one-out maximizer.
pub fn loo_bandwidth<T: Scalar>(data: &Dataset<T>) -> Result<T> {
    let spread = data.mean_coordinate_std().as_f64();
    if !(spread > 0.0) || !spread.is_finite() {
        return Err(NbbError::DegenerateSample);
    }
    let objective = |log_h: f64| loo_log_likelihood(data, T::lit(log_h.exp())).as_f64();
    let lo = (BRACKET_LO * spread).ln();
    let hi = (BRACKET_HI * spread).ln();
    let best = golden_section_max(objective, lo, hi, LOG_H_TOL);
    if !best.value.is_finite() || best.arg - lo < 2.0 * LOG_H_TOL || hi - best.arg < 2.0 * LOG_H_TOL {
        return Err(NbbError::DegenerateSample);
    }
    Ok(T::lit(best.arg.exp()))
}

pub(crate) struct Extremum {
    pub arg: f64,
    pub value: f64,
}

/// Golden-section search for the maximum of a unimodal function on `[lo, hi]`.
pub(crate) fn golden_section_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> Extremum {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        // NaN compares false, which moves the bracket toward `lo`.
        if f1 >= f2 || f2.is_nan() {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    let arg = 0.5 * (lo + hi);
    Extremum { arg, value: f(arg) }
}
