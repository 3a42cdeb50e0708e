//! Equality-constrained sequential quadratic programming.
//!
//! Each iteration solves the QP subproblem
//!
//! ```text
//! min_d  gᵀd + ½ dᵀB d   s.t.  J d + c = 0
//! ```
//!
//! through its KKT system, with `B` a damped-BFGS approximation of the
//! Lagrangian Hessian, then takes a backtracking step on the L1 exact-penalty
//! merit `f + ρ‖c‖₁`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Singular-value ratio below which the constraint Jacobian counts as rank
/// deficient.
pub const RANK_TOL: f64 = 1e-12;

/// Smooth objective with equality constraints `c(x) = 0`.
pub trait NlpProblem {
    fn dim(&self) -> usize;
    fn objective(&self, x: &[f64]) -> Result<f64>;
    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn constraints(&self, x: &[f64]) -> Vec<f64>;
    /// Rows are constraint gradients.
    fn jacobian(&self, x: &[f64]) -> DMatrix<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Infinity norm of the Lagrangian gradient at which the run stops.
    pub kkt_tol: f64,
    pub step_tol: f64,
    /// Largest constraint violation accepted as feasible.
    pub feasibility_tol: f64,
    /// Sufficient-decrease parameter of the Armijo test.
    pub armijo: f64,
    pub penalty_margin: f64,
    pub min_step_length: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            kkt_tol: 1e-8,
            step_tol: 1e-10,
            feasibility_tol: 1e-10,
            armijo: 1e-4,
            penalty_margin: 1e-2,
            min_step_length: 1e-12,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("kkt_tol", self.kkt_tol),
            ("step_tol", self.step_tol),
            ("feasibility_tol", self.feasibility_tol),
            ("penalty_margin", self.penalty_margin),
            ("min_step_length", self.min_step_length),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(name, format!("must be positive, got {v}")));
            }
        }
        if !(self.armijo > 0.0 && self.armijo < 0.5) {
            return Err(invalid("armijo", "must lie in (0, 1/2)"));
        }
        if self.max_iterations == 0 {
            return Err(invalid("max_iterations", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Kkt,
    SmallStep,
    IterationLimit,
    LineSearch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SqpOutcome {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub max_violation: f64,
    pub converged: bool,
    pub stop: StopReason,
    /// Merit before and after each accepted step, at the penalty used for it.
    pub merit_trace: Vec<(f64, f64)>,
}

/// Solves `[[H, Jᵀ], [J, 0]] [d; −μ] = [−g; −c]`.
pub fn solve_equality_qp(
    hessian: &DMatrix<f64>,
    grad: &DVector<f64>,
    jac: &DMatrix<f64>,
    cviol: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = hessian.nrows();
    let m = jac.nrows();
    if hessian.ncols() != n || grad.len() != n || jac.ncols() != n || cviol.len() != m {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: jac.ncols(),
        });
    }
    if m > 0 {
        let ratio = singular_value_ratio(jac);
        if ratio < RANK_TOL {
            return Err(Error::RankDeficient { ratio });
        }
    }
    let mut kkt = DMatrix::zeros(n + m, n + m);
    kkt.view_mut((0, 0), (n, n)).copy_from(hessian);
    kkt.view_mut((0, n), (n, m)).copy_from(&jac.transpose());
    kkt.view_mut((n, 0), (m, n)).copy_from(jac);
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(&(-grad));
    rhs.rows_mut(n, m).copy_from(&(-cviol));
    let sol = kkt.full_piv_lu().solve(&rhs).ok_or(Error::SingularKkt)?;
    let step = sol.rows(0, n).into_owned();
    let multipliers = -sol.rows(n, m).into_owned();
    Ok((step, multipliers))
}

fn singular_value_ratio(jac: &DMatrix<f64>) -> f64 {
    let sv = jac.clone().svd(false, false).singular_values;
    let max = sv.max();
    if max == 0.0 {
        return 0.0;
    }
    sv.min() / max
}

/// Multipliers minimising `‖g − Jᵀμ‖₂`, via the SVD so a rank-deficient
/// Jacobian still gives a meaningful residual.
fn least_squares_multipliers(grad: &DVector<f64>, jac: &DMatrix<f64>) -> DVector<f64> {
    let jt = jac.transpose();
    let svd = jt.svd(true, true);
    svd.solve(grad, 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE))
        .unwrap_or_else(|_| DVector::zeros(jac.nrows()))
}

/// Minimum-norm Newton step onto `c(x) = 0` using only the independent
/// directions of the Jacobian.
fn restoration_step(jac: &DMatrix<f64>, c: &DVector<f64>) -> DVector<f64> {
    let svd = jac.clone().svd(true, true);
    let tol = 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE);
    svd.solve(&(-c), tol).unwrap_or_else(|_| DVector::zeros(jac.ncols()))
}

/// Newton iterations `x ← x − J⁺ c(x)` until the violation drops below `tol`.
pub fn project_onto_constraints<P: NlpProblem + ?Sized>(
    problem: &P,
    x: &[f64],
    tol: f64,
    max_iterations: usize,
) -> Result<Vec<f64>> {
    let mut x = DVector::from_column_slice(x);
    for _ in 0..max_iterations {
        let c = DVector::from_vec(problem.constraints(x.as_slice()));
        if c.amax() <= tol {
            return Ok(x.as_slice().to_vec());
        }
        x += restoration_step(&problem.jacobian(x.as_slice()), &c);
    }
    let c = problem.constraints(x.as_slice());
    let worst = c.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if worst <= tol {
        Ok(x.as_slice().to_vec())
    } else {
        Err(Error::Infeasible(format!(
            "Newton projection left a violation of {worst:.3e}"
        )))
    }
}

struct Point {
    x: DVector<f64>,
    f: f64,
    g: DVector<f64>,
    c: DVector<f64>,
    jac: DMatrix<f64>,
}

impl Point {
    fn new<P: NlpProblem + ?Sized>(problem: &P, x: DVector<f64>) -> Result<Self> {
        let f = problem.objective(x.as_slice())?;
        let g = DVector::from_vec(problem.gradient(x.as_slice())?);
        let c = DVector::from_vec(problem.constraints(x.as_slice()));
        let jac = problem.jacobian(x.as_slice());
        Ok(Self { x, f, g, c, jac })
    }

    fn violation(&self) -> f64 {
        self.c.amax()
    }

    fn merit(&self, penalty: f64) -> f64 {
        self.f + penalty * self.c.lp_norm(1)
    }

    fn lagrangian_gradient(&self, mu: &DVector<f64>) -> DVector<f64> {
        &self.g - self.jac.transpose() * mu
    }

    fn kkt_residual(&self) -> f64 {
        let mu = least_squares_multipliers(&self.g, &self.jac);
        self.lagrangian_gradient(&mu).amax()
    }
}

/// Step of the QP subproblem. A rank-deficient Jacobian is replaced by its
/// independent rows, which keeps the same linearised feasible set.
fn qp_step(
    b: &DMatrix<f64>,
    p: &Point,
) -> Result<(DVector<f64>, DVector<f64>)> {
    match solve_equality_qp(b, &p.g, &p.jac, &p.c) {
        Err(Error::RankDeficient { .. }) | Err(Error::SingularKkt) => {
            let svd = p.jac.clone().svd(true, true);
            let smax = svd.singular_values.max();
            let u = svd.u.as_ref().expect("requested");
            let vt = svd.v_t.as_ref().expect("requested");
            let keep: Vec<usize> = (0..svd.singular_values.len())
                .filter(|&i| svd.singular_values[i] > RANK_TOL * smax)
                .collect();
            let reduced_jac = DMatrix::from_fn(keep.len(), p.jac.ncols(), |i, j| {
                svd.singular_values[keep[i]] * vt[(keep[i], j)]
            });
            let reduced_c = DVector::from_fn(keep.len(), |i, _| u.column(keep[i]).dot(&p.c));
            let (d, nu) = solve_equality_qp(b, &p.g, &reduced_jac, &reduced_c)?;
            // map back: Jᵀμ = J_rᵀν
            let mu = least_squares_multipliers(&(reduced_jac.transpose() * nu), &p.jac);
            Ok((d, mu))
        }
        other => other,
    }
}

/// Minimises `problem` from `x0`.
pub fn sqp_minimize<P: NlpProblem + ?Sized>(
    problem: &P,
    x0: &[f64],
    opts: &SolverOptions,
) -> Result<SqpOutcome> {
    opts.validate()?;
    let n = problem.dim();
    if x0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: x0.len(),
        });
    }
    let mut point = Point::new(problem, DVector::from_column_slice(x0))?;
    let mut b = DMatrix::<f64>::identity(n, n);
    let mut scaled = false;
    let mut penalty = 0.0_f64;
    let mut merit_trace = Vec::new();
    let mut kkt = point.kkt_residual();
    let mut stop = StopReason::IterationLimit;
    let mut iterations = 0;
    let mut retried_with_reset = false;

    while iterations < opts.max_iterations {
        let feasible = point.violation() <= opts.feasibility_tol;
        if feasible && kkt < opts.kkt_tol {
            stop = StopReason::Kkt;
            break;
        }
        let (d, mu) = qp_step(&b, &point)?;
        if feasible && d.norm() < opts.step_tol {
            stop = StopReason::SmallStep;
            break;
        }
        // Powell's rule lets the penalty relax again after a multiplier spike,
        // which happens where the constraint gradients turn parallel
        let needed = mu.amax() + opts.penalty_margin;
        penalty = needed.max(0.5 * (penalty + needed));
        let merit0 = point.merit(penalty);
        let slope = point.g.dot(&d) - penalty * point.c.lp_norm(1);

        // a negligible accepted step means the model is off, not that we are done
        let accepted = line_search(problem, &point, &d, penalty, merit0, slope, opts)?
            .filter(|next| (&next.x - &point.x).norm() >= opts.step_tol);
        let Some(next) = accepted else {
            if !retried_with_reset {
                retried_with_reset = true;
                b = DMatrix::identity(n, n);
                scaled = false;
                continue;
            }
            stop = StopReason::LineSearch;
            break;
        };
        retried_with_reset = false;
        iterations += 1;
        merit_trace.push((merit0, next.merit(penalty)));

        let s = &next.x - &point.x;
        let y = next.lagrangian_gradient(&mu) - point.lagrangian_gradient(&mu);
        if !scaled {
            let sy = s.dot(&y);
            if sy > 0.0 {
                b = DMatrix::identity(n, n) * (y.dot(&y) / sy);
            }
            scaled = true;
        }
        damped_bfgs_update(&mut b, &s, &y);
        point = next;
        kkt = point.kkt_residual();
    }

    let max_violation = point.violation();
    let feasible = max_violation <= opts.feasibility_tol;
    let converged = feasible && matches!(stop, StopReason::Kkt | StopReason::SmallStep);
    Ok(SqpOutcome {
        x: point.x.as_slice().to_vec(),
        objective: point.f,
        iterations,
        kkt_residual: kkt,
        max_violation,
        converged,
        stop,
        merit_trace,
    })
}

/// Backtracking on the L1 merit with one second-order correction when the
/// full step is rejected.
fn line_search<P: NlpProblem + ?Sized>(
    problem: &P,
    point: &Point,
    d: &DVector<f64>,
    penalty: f64,
    merit0: f64,
    slope: f64,
    opts: &SolverOptions,
) -> Result<Option<Point>> {
    let slope = slope.min(0.0);
    let full = Point::new(problem, &point.x + d)?;
    if full.merit(penalty) <= merit0 + opts.armijo * slope {
        return Ok(Some(full));
    }
    // second-order correction pulls the trial point back towards c = 0
    let correction = restoration_step(&point.jac, &full.c);
    let soc = Point::new(problem, &point.x + d + correction)?;
    if soc.merit(penalty) <= merit0 + opts.armijo * slope {
        return Ok(Some(soc));
    }
    let mut alpha = 0.5;
    while alpha * d.norm() >= opts.min_step_length {
        let trial = Point::new(problem, &point.x + d * alpha)?;
        if trial.merit(penalty) <= merit0 + opts.armijo * alpha * slope {
            return Ok(Some(trial));
        }
        alpha *= 0.5;
    }
    Ok(None)
}

/// BFGS update with Powell damping, keeping `b` positive definite.
fn damped_bfgs_update(b: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>) {
    let bs = &*b * s;
    let sbs = s.dot(&bs);
    if sbs <= f64::EPSILON * s.norm_squared().max(f64::MIN_POSITIVE) {
        return;
    }
    let sy = s.dot(y);
    let theta = if sy >= 0.2 * sbs { 1.0 } else { 0.8 * sbs / (sbs - sy) };
    let r = y * theta + &bs * (1.0 - theta);
    let sr = s.dot(&r);
    if sr <= 0.0 {
        return;
    }
    *b -= &bs * bs.transpose() / sbs;
    *b += &r * r.transpose() / sr;
    *b = (&*b + b.transpose()) * 0.5;
}
