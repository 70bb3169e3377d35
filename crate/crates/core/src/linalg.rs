//! Symmetric eigen-solvers used by ridge estimation.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::scalar::Scalar;

/// Dimension above which [`EigenSolver::Partial`] switches to the iterative
/// top-d solver. Smaller problems always use the full decomposition.
pub const PARTIAL_MIN_DIM: usize = 32;

/// How the tangent eigenspace is obtained during SCMS iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EigenSolver {
    #[default]
    Full,
    /// Block subspace iteration for the top-d eigenpairs when `n > 32`.
    Partial,
}

/// Eigenpairs with eigenvalues in increasing order.
#[derive(Debug, Clone)]
pub struct SortedEigen<T: Scalar> {
    pub values: DVector<T>,
    /// Columns are eigenvectors, matching `values`.
    pub vectors: DMatrix<T>,
}

impl<T: Scalar> SortedEigen<T> {
    /// Bottom-`c` eigenvectors (most negative eigenvalues first).
    pub fn bottom(&self, c: usize) -> DMatrix<T> {
        self.vectors.columns(0, c).into_owned()
    }

    /// Top-`d` eigenvectors.
    pub fn top(&self, d: usize) -> DMatrix<T> {
        let n = self.vectors.ncols();
        self.vectors.columns(n - d, d).into_owned()
    }
}

/// Full decomposition of a symmetric matrix, sorted ascending.
pub fn symmetric_eigen<T: Scalar>(m: &DMatrix<T>) -> SortedEigen<T> {
    let eig = SymmetricEigen::new(m.clone());
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    SortedEigen { values, vectors }
}

/// Top-`d` eigenpairs of a symmetric matrix by block subspace iteration with
/// Rayleigh-Ritz extraction, warm-started from `start` when given.
/// Returns `(values ascending, vectors n x d)`.
pub fn top_eigenpairs<T: Scalar>(m: &DMatrix<T>, d: usize, start: Option<&DMatrix<T>>) -> (DVector<T>, DMatrix<T>) {
    let n = m.nrows();
    assert!(d >= 1 && d <= n);
    // Gershgorin lower bound; the shifted matrix is positive semidefinite so
    // the dominant eigenpairs are the algebraically largest ones.
    let shift = (0..n)
        .map(|i| {
            let off = (0..n).filter(|&j| j != i).map(|j| m[(i, j)].abs()).fold(T::zero(), |a, b| a + b);
            m[(i, i)] - off
        })
        .fold(T::infinity(), |a, b| if b < a { b } else { a });
    let mut shifted = m.clone();
    for i in 0..n {
        shifted[(i, i)] -= shift;
    }
    let scale = shifted.norm().max(T::machine_epsilon());

    let mut q = match start {
        Some(s) if s.shape() == (n, d) => s.clone(),
        _ => DMatrix::from_fn(n, d, |r, c| {
            // deterministic, generic starting block
            T::lit(((r * 7919 + c * 104729) % 1009) as f64 / 1009.0 - 0.5) + if r == c { T::one() } else { T::zero() }
        }),
    };
    q = orthonormalize(&q);
    let tol = T::machine_epsilon().sqrt() * T::machine_epsilon().sqrt().sqrt();
    let mut values = DVector::zeros(d);
    for _ in 0..5000 {
        let z = &shifted * &q;
        let small = q.transpose() * &z;
        let small = (&small + small.transpose()) * T::lit(0.5);
        let ritz = symmetric_eigen(&small);
        // Ritz vectors and the residual of the current block
        let qr = &q * &ritz.vectors;
        let zr = &z * &ritz.vectors;
        let residual = &zr - &qr * DMatrix::from_diagonal(&ritz.values);
        values = ritz.values.clone();
        if residual.norm() <= tol * scale {
            q = qr;
            break;
        }
        q = orthonormalize(&zr);
    }
    let values = values.map(|v| v + shift);
    (values, q)
}

/// Modified Gram-Schmidt on the columns; rank-deficient columns are replaced
/// by unit vectors orthogonal to the rest.
pub fn orthonormalize<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    let (n, k) = m.shape();
    let mut out = m.clone();
    for j in 0..k {
        for _pass in 0..2 {
            for i in 0..j {
                let proj = out.column(i).dot(&out.column(j));
                let ci = out.column(i).into_owned();
                let mut cj = out.column_mut(j);
                cj.axpy(-proj, &ci, T::one());
            }
        }
        let norm = out.column(j).norm();
        if norm > T::machine_epsilon() * T::lit(1e3) {
            out.column_mut(j).unscale_mut(norm);
        } else {
            // pick the coordinate axis least represented so far
            let axis = (0..n)
                .min_by(|&a, &b| {
                    let wa: T = (0..j).map(|i| out[(a, i)] * out[(a, i)]).fold(T::zero(), |x, y| x + y);
                    let wb: T = (0..j).map(|i| out[(b, i)] * out[(b, i)]).fold(T::zero(), |x, y| x + y);
                    wa.partial_cmp(&wb).unwrap_or(std::cmp::Ordering::Equal)
                })
                .unwrap_or(0);
            out.column_mut(j).fill(T::zero());
            out[(axis, j)] = T::one();
            for i in 0..j {
                let proj = out.column(i).dot(&out.column(j));
                let ci = out.column(i).into_owned();
                out.column_mut(j).axpy(-proj, &ci, T::one());
            }
            let norm = out.column(j).norm();
            out.column_mut(j).unscale_mut(norm);
        }
    }
    out
}

/// Projector `V V^T` onto the column span of an orthonormal `V`.
pub fn projector<T: Scalar>(v: &DMatrix<T>) -> DMatrix<T> {
    v * v.transpose()
}

/// Largest sine of the principal angles between two column-orthonormal
/// frames of equal width.
pub fn max_principal_angle_sine<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> T {
    // residual of a after projecting onto span(b); avoids the sqrt(1 - cos^2) cancellation
    let residual = a - b * (b.transpose() * a);
    let sv = residual.singular_values();
    let max = sv.iter().copied().fold(T::zero(), |x, y| if y > x { y } else { x });
    if max > T::one() { T::one() } else { max }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd_like(n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |i, j| ((i * 31 + j * 17) % 13) as f64 / 13.0 - 0.4);
        let s = &a + a.transpose();
        // spread the spectrum so the top block is well separated
        s + DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| (i * i) as f64 / 8.0))
    }

    #[test]
    fn sorted_ascending_and_orthonormal() {
        let m = spd_like(6);
        let e = symmetric_eigen(&m);
        for i in 1..6 {
            assert!(e.values[i] >= e.values[i - 1]);
        }
        let g = e.vectors.transpose() * &e.vectors;
        assert!((g - DMatrix::identity(6, 6)).norm() < 1e-12);
        let recon = &e.vectors * DMatrix::from_diagonal(&e.values) * e.vectors.transpose();
        assert!((recon - m).norm() < 1e-10);
    }

    #[test]
    fn partial_matches_full() {
        let m = spd_like(40);
        let full = symmetric_eigen(&m);
        for d in [1, 2, 3] {
            let (vals, vecs) = top_eigenpairs(&m, d, None);
            for k in 0..d {
                assert!((vals[k] - full.values[40 - d + k]).abs() < 1e-8);
            }
            let p1 = projector(&vecs);
            let p2 = projector(&full.top(d));
            assert!((p1 - p2).norm() < 1e-8);
        }
    }

    #[test]
    fn orthonormalize_handles_dependent_columns() {
        let m = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]);
        let q = orthonormalize(&m);
        assert!((q.transpose() * &q - DMatrix::identity(2, 2)).norm() < 1e-12);
    }
}
