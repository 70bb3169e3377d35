//! Subspace-constrained mean shift (SCMS) onto the ridge of `log p`.
//!
//! Each iteration moves the point by the mean-shift vector projected onto
//! the span of the bottom `c = n - d` Hessian eigenvectors. Iteration stops
//! once the constrained fraction `theta = |L m| / |m|` falls below
//! `theta0`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{NbbError, Result};
use crate::kde::{DensityEval, KdeModel, ThirdDerivative};
use crate::linalg::{symmetric_eigen, top_eigenpairs, EigenSolver, SortedEigen, PARTIAL_MIN_DIM};
use crate::scalar::Scalar;

/// Absolute step floor, as a multiple of the bandwidth.
const STEP_FLOOR: f64 = 1e-9;
/// Largest allowed step, as a multiple of the bandwidth.
const MAX_STEP: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RidgeStatus {
    Converged,
    /// Converged to a critical point with `lambda_c >= 0`.
    Saddle,
    MaxIterations,
    /// Start point outside the numerical support of the estimate.
    Invalid,
}

/// A projected point together with the local Hessian spectrum.
#[derive(Debug, Clone)]
pub struct RidgePoint<T: Scalar> {
    pub position: DVector<T>,
    /// n x c, bottom-c eigenvectors of the Hessian of `log p` at `position`.
    pub frame_vc: DMatrix<T>,
    /// All n eigenvalues, increasing.
    pub eigenvalues: DVector<T>,
    pub iterations: usize,
    pub status: RidgeStatus,
}

impl<T: Scalar> RidgePoint<T> {
    /// Usable as a ridge point downstream.
    pub fn converged(&self) -> bool {
        self.status == RidgeStatus::Converged
    }

    pub fn codim(&self) -> usize {
        self.frame_vc.ncols()
    }

    fn from_eval(position: DVector<T>, eval: &DensityEval<T>, c: usize, iterations: usize, hit_limit: bool) -> Self {
        let eig = symmetric_eigen(&eval.hessian);
        let status = if !eval.valid {
            RidgeStatus::Invalid
        } else if hit_limit {
            RidgeStatus::MaxIterations
        } else if eig.values[c - 1] >= T::zero() {
            RidgeStatus::Saddle
        } else {
            RidgeStatus::Converged
        };
        Self {
            position,
            frame_vc: eig.bottom(c),
            eigenvalues: eig.values,
            iterations,
            status,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ScmsSettings<T: Scalar> {
    /// Ridge dimension d.
    pub d: usize,
    pub theta0: T,
    pub max_iterations: usize,
    pub eigen: EigenSolver,
}

impl<T: Scalar> ScmsSettings<T> {
    pub fn new(d: usize) -> Self {
        Self {
            d,
            theta0: T::lit(0.05),
            max_iterations: 2000,
            eigen: EigenSolver::Full,
        }
    }

    pub fn with_theta0(self, theta0: T) -> Self {
        Self { theta0, ..self }
    }

    pub fn with_max_iterations(self, max_iterations: usize) -> Self {
        Self { max_iterations, ..self }
    }

    pub fn with_eigen(self, eigen: EigenSolver) -> Self {
        Self { eigen, ..self }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.d == 0 || self.d >= n {
            return Err(NbbError::InvalidParameter(format!(
                "ridge dimension d must satisfy 0 < d < n = {n}, got {}",
                self.d
            )));
        }
        if !(self.theta0 > T::zero() && self.theta0 < T::one()) {
            return Err(NbbError::InvalidParameter(format!("theta0 must lie in (0, 1), got {}", self.theta0)));
        }
        if self.max_iterations == 0 {
            return Err(NbbError::InvalidParameter("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

/// One recorded SCMS iteration.
#[derive(Debug, Clone)]
pub struct ScmsStep<T: Scalar> {
    pub position: DVector<T>,
    pub log_density: T,
    pub step: DVector<T>,
    pub theta: T,
}

/// Tangent projection `I - V_d V_d^T` applied to `v`, using the requested
/// eigen-solver. `warm` carries the previous top-d block between iterations.
fn constrain<T: Scalar>(
    hessian: &DMatrix<T>,
    v: &DVector<T>,
    d: usize,
    solver: EigenSolver,
    warm: &mut Option<DMatrix<T>>,
) -> DVector<T> {
    let n = hessian.nrows();
    let top = if solver == EigenSolver::Partial && n > PARTIAL_MIN_DIM {
        let (_, vecs) = top_eigenpairs(hessian, d, warm.as_ref());
        *warm = Some(vecs.clone());
        vecs
    } else {
        symmetric_eigen(hessian).top(d)
    };
    v - &top * (top.transpose() * v)
}

fn check_query<T: Scalar>(y: &DVector<T>, model: &KdeModel<T>) -> Result<()> {
    if y.len() != model.dim() {
        return Err(NbbError::InvalidParameter(format!(
            "query has dimension {}, model has {}",
            y.len(),
            model.dim()
        )));
    }
    if y.iter().any(|v| !v.is_finite_value()) {
        return Err(NbbError::InvalidParameter("query has non-finite entries".into()));
    }
    Ok(())
}

fn scms_run<T: Scalar>(
    y: &DVector<T>,
    model: &KdeModel<T>,
    settings: &ScmsSettings<T>,
    mut trace: Option<&mut Vec<ScmsStep<T>>>,
) -> Result<RidgePoint<T>> {
    settings.validate(model.dim())?;
    check_query(y, model)?;
    let h = model.bandwidth();
    let c = model.dim() - settings.d;
    let floor = T::lit(STEP_FLOOR) * h;
    let max_step = T::lit(MAX_STEP) * h;
    let mut x = y.clone();
    let mut warm = None;
    for it in 1..=settings.max_iterations {
        let eval = model.eval(&x);
        if !eval.valid {
            return Ok(RidgePoint::from_eval(x, &eval, c, it, false));
        }
        let m = eval.mean_shift(h);
        let mut s = constrain(&eval.hessian, &m, settings.d, settings.eigen, &mut warm);
        let m_norm = m.norm();
        let s_norm = s.norm();
        // theta = m.s / (|m||s|) = |s| / |m| because s is an orthogonal projection of m
        let theta = if m_norm > T::zero() && s_norm > T::zero() {
            m.dot(&s) / (m_norm * s_norm)
        } else {
            T::zero()
        };
        if s_norm > max_step {
            s *= max_step / s_norm;
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push(ScmsStep {
                position: x.clone(),
                log_density: eval.log_density,
                step: s.clone(),
                theta,
            });
        }
        if theta < settings.theta0 || s_norm < floor {
            return Ok(RidgePoint::from_eval(x, &eval, c, it, false));
        }
        x += s;
    }
    let eval = model.eval(&x);
    Ok(RidgePoint::from_eval(x, &eval, c, settings.max_iterations, true))
}

/// Projects `y` onto the estimated d-dimensional ridge.
pub fn scms_project<T: Scalar>(y: &DVector<T>, model: &KdeModel<T>, settings: &ScmsSettings<T>) -> Result<RidgePoint<T>> {
    scms_run(y, model, settings, None)
}

/// Like [`scms_project`] but also returns every iterate.
pub fn scms_trace<T: Scalar>(
    y: &DVector<T>,
    model: &KdeModel<T>,
    settings: &ScmsSettings<T>,
) -> Result<(RidgePoint<T>, Vec<ScmsStep<T>>)> {
    let mut steps = Vec::new();
    let rp = scms_run(y, model, settings, Some(&mut steps))?;
    Ok((rp, steps))
}

/// Projects every sample point; output index `i` corresponds to data row `i`.
pub fn estimate_ridge<T: Scalar>(data: &Dataset<T>, model: &KdeModel<T>, settings: &ScmsSettings<T>) -> Result<Vec<RidgePoint<T>>> {
    settings.validate(model.dim())?;
    if data.dim() != model.dim() {
        return Err(NbbError::InvalidParameter("data and model dimensions differ".into()));
    }
    (0..data.len())
        .into_par_iter()
        .map(|i| scms_project(&data.row(i), model, settings))
        .collect()
}

/// `|L g| / |g|` where `L` projects onto the bottom-c eigenvectors.
pub fn ridge_residual<T: Scalar>(model: &KdeModel<T>, x: &DVector<T>, d: usize) -> T {
    let eval = model.eval(x);
    let vc = symmetric_eigen(&eval.hessian).bottom(model.dim() - d);
    let lg = &vc * (vc.transpose() * &eval.gradient);
    let g = eval.gradient.norm();
    if g > T::zero() {
        lg.norm() / g
    } else {
        T::zero()
    }
}

/// Frame used for the Newton normal-space system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NewtonFrame {
    /// Bottom-c eigenvectors at the starting point, reused throughout.
    Frozen,
    /// Bottom-c eigenvectors recomputed at every iterate.
    #[default]
    Current,
    /// Current frame, with the Jacobian extended by the rotation of the
    /// frame along the step. Converges quadratically to a root of `L g`.
    Corrected,
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome<T: Scalar> {
    pub point: RidgePoint<T>,
    /// `|L_t g_t|` at every evaluated iterate, starting with the input.
    pub residuals: Vec<T>,
    /// Iterations that fell back to a plain SCMS step.
    pub fallback_steps: usize,
}

impl<T: Scalar> NewtonOutcome<T> {
    pub fn degraded(&self) -> bool {
        self.fallback_steps > 0
    }
}

const NEWTON_REL_TOL: f64 = 1e-10;
const NEWTON_MAX_ITER: usize = 50;
const SINGULAR_DET: f64 = 1e-14;

/// Newton iteration for `L g = 0` restricted to the normal space.
///
/// Solves `(V_c^T H V_c) y = -V_c^T g` and moves by `V_c y`.
pub fn newton_refine<T: Scalar>(x: &DVector<T>, model: &KdeModel<T>, d: usize, mode: NewtonFrame) -> Result<NewtonOutcome<T>> {
    ScmsSettings::<T>::new(d).validate(model.dim())?;
    check_query(x, model)?;
    let n = model.dim();
    let c = n - d;
    let h = model.bandwidth();
    let h2 = h * h;
    let mut x = x.clone();
    let mut residuals = Vec::new();
    let mut fallback_steps = 0;
    let mut frozen: Option<DMatrix<T>> = None;
    for it in 1..=NEWTON_MAX_ITER {
        let eval = model.eval(&x);
        if !eval.valid {
            return Ok(NewtonOutcome {
                point: RidgePoint::from_eval(x, &eval, c, it, false),
                residuals,
                fallback_steps,
            });
        }
        let eig: SortedEigen<T> = symmetric_eigen(&eval.hessian);
        let vc = match mode {
            NewtonFrame::Current | NewtonFrame::Corrected => eig.bottom(c),
            NewtonFrame::Frozen => frozen.get_or_insert_with(|| eig.bottom(c)).clone(),
        };
        let coeffs = vc.transpose() * &eval.gradient;
        let residual = coeffs.norm();
        residuals.push(residual);
        let g = eval.gradient.norm();
        if residual <= T::lit(NEWTON_REL_TOL) * g || g == T::zero() {
            return Ok(NewtonOutcome {
                point: RidgePoint::from_eval(x, &eval, c, it, false),
                residuals,
                fallback_steps,
            });
        }
        let mut reduced = vc.transpose() * &eval.hessian * &vc;
        if mode == NewtonFrame::Corrected {
            if let Some(third) = model.third_derivative(&x) {
                reduced += frame_rotation_term(&eig, &third, &eval.gradient, c);
            }
        }
        let det = (&reduced * h2).determinant();
        let solved = if det.abs() < T::lit(SINGULAR_DET) {
            None
        } else {
            reduced.lu().solve(&(-&coeffs))
        };
        match solved {
            Some(y) => x += &vc * y,
            None => {
                fallback_steps += 1;
                let m = eval.mean_shift(h);
                let vc_now = eig.bottom(c);
                x += &vc_now * (vc_now.transpose() * m);
            }
        }
    }
    let eval = model.eval(&x);
    Ok(NewtonOutcome {
        point: RidgePoint::from_eval(x, &eval, c, NEWTON_MAX_ITER, true),
        residuals,
        fallback_steps,
    })
}

/// `V_c^T (dL[V_c e_a]) g` for every `a`, where `dL` is the derivative of the
/// normal projector. First-order eigenvector perturbation gives
/// `u_b^T dL[v] g = sum_{j >= c} T(v, u_b, u_j) (u_j^T g) / (lambda_b - lambda_j)`.
fn frame_rotation_term<T: Scalar>(eig: &SortedEigen<T>, third: &ThirdDerivative<T>, g: &DVector<T>, c: usize) -> DMatrix<T> {
    let n = eig.values.len();
    let scale = eig.values.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    let mut out = DMatrix::<T>::zeros(c, c);
    for b in 0..c {
        let mut t = DVector::<T>::zeros(n);
        for j in c..n {
            let gap = eig.values[b] - eig.values[j];
            if gap.abs() <= T::machine_epsilon() * scale {
                continue;
            }
            let uj = eig.vectors.column(j);
            t += uj * (uj.dot(g) / gap);
        }
        let ub = eig.vectors.column(b).into_owned();
        for a in 0..c {
            let ua = eig.vectors.column(a).into_owned();
            out[(b, a)] = third.contract(&ua, &ub, &t);
        }
    }
    out
}

/// Result of eigengap-based ridge dimension selection.
#[derive(Debug, Clone, Serialize)]
pub struct DimensionEstimate {
    pub d: usize,
    pub codim: usize,
    /// `min_x (lambda_{c+1} - lambda_c)` for `c = 1..n-1`, index `c - 1`.
    pub gaps: Vec<f64>,
    /// Another codimension reached the same gap.
    pub tie: bool,
    /// The winning gap is not clearly separated (see [`WEAK_GAP_RATIO`] and
    /// [`WEAK_GAP_RELATIVE`]).
    pub weak: bool,
}

/// A best gap smaller than this multiple of the runner-up is weak.
pub const WEAK_GAP_RATIO: f64 = 2.0;
/// A best gap smaller than this fraction of `1 / h^2` is weak. This is the
/// only check available when `n = 2`.
pub const WEAK_GAP_RELATIVE: f64 = 0.1;

/// Picks `d = n - c` where `c` maximizes the smallest eigengap
/// `lambda_{c+1} - lambda_c` of the log-density Hessian over the sample.
pub fn eigengap_dimension<T: Scalar>(data: &Dataset<T>, model: &KdeModel<T>) -> Result<DimensionEstimate> {
    let n = model.dim();
    if n < 2 {
        return Err(NbbError::InvalidData("dimension selection needs n >= 2".into()));
    }
    let evals = model.eval_many(data.points());
    let spectra: Vec<DVector<T>> = evals.par_iter().map(|e| symmetric_eigen(&e.hessian).values).collect();
    let gaps: Vec<f64> = (1..n)
        .map(|c| {
            spectra
                .iter()
                .map(|l| (l[c] - l[c - 1]).as_f64())
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mut best = 0;
    for (i, &g) in gaps.iter().enumerate() {
        if g > gaps[best] {
            best = i;
        }
    }
    let tie = gaps.iter().enumerate().any(|(i, &g)| i != best && g == gaps[best]);
    let runner_up = gaps
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != best)
        .map(|(_, &g)| g)
        .fold(f64::NEG_INFINITY, f64::max);
    let h2 = (model.bandwidth() * model.bandwidth()).as_f64();
    let weak = gaps[best] < WEAK_GAP_RATIO * runner_up || gaps[best] * h2 < WEAK_GAP_RELATIVE;
    let codim = best + 1;
    if weak {
        log::warn!("weak eigengap: best gap {:.3e} at c = {codim}", gaps[best]);
    }
    Ok(DimensionEstimate {
        d: n - codim,
        codim,
        gaps,
        tie,
        weak,
    })
}
