//! Empirical-likelihood weight solver.
//!
//! Maximizes `prod p_i` over probability vectors subject to moment
//! constraints `sum_i p_i * U_i = 0`, where the rows `U_i` are centered
//! estimating functions. The maximization is done through the Lagrange
//! dual: `p_i = (1/m) / (1 + lambda' U_i)` with `lambda` the maximizer of
//! `l(lambda) = sum_i log(1 + lambda' U_i)`, found by a modified
//! Newton-Raphson iteration with step halving and a relaxation schedule.
//!
//! When the zero vector falls outside the convex hull of the rows, no
//! multiplier exists; the solver can repair this by appending two
//! artificial rows that expand the hull while preserving the sample mean,
//! then renormalizing the real-subject weights.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ElError {
    #[error("constraint matrix contains a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("lambda is infeasible: 1 + lambda'U_i <= 0 at row {row}")]
    InfeasibleLambda { row: usize },
    #[error("Newton iteration did not converge within {max_iterations} iterations")]
    ConvergenceFailure { max_iterations: usize },
    #[error("zero vector is outside the convex hull of the constraint rows")]
    HullViolation,
    #[error("Newton system is singular even after ridge repair")]
    SingularHessian,
    #[error("mean of constraint rows is the zero vector; augmentation direction undefined")]
    ZeroMeanDirection,
    #[error("sample covariance of constraint rows is singular even after ridge repair")]
    SingularCovariance,
    #[error("constraint matrix must have at least {min} rows, got {got}")]
    TooFewRows { min: usize, got: usize },
    #[error("constraint matrix must have at least one column")]
    NoColumns,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Centered estimating-function rows, one row per retained subject.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintMatrix {
    values: DMatrix<f64>,
}

impl ConstraintMatrix {
    /// Wraps already-centered rows. Every entry must be finite and the
    /// matrix must be at least 2 x 1.
    pub fn new(values: DMatrix<f64>) -> Result<Self, ElError> {
        if values.ncols() == 0 {
            return Err(ElError::NoColumns);
        }
        if values.nrows() < 2 {
            return Err(ElError::TooFewRows { min: 2, got: values.nrows() });
        }
        check_finite(&values)?;
        Ok(Self { values })
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_constraints(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }
}

/// Options for the modified Newton-Raphson dual search.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Stopping tolerance on the Newton step norm.
    pub epsilon: f64,
    /// Iteration cap before declaring failure.
    pub max_iterations: usize,
    /// Scale `s` of the two artificial points used for hull repair.
    pub augmentation_scale: f64,
    /// Baseline ridge added to the Newton system before the escalating repair.
    pub hessian_ridge: f64,
    /// Retry with the augmented sample when the plain solve fails.
    pub auto_augment: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-8,
            max_iterations: 500,
            augmentation_scale: 2.0,
            hessian_ridge: 0.0,
            auto_augment: true,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<(), ElError> {
        if !(self.epsilon > 0.0) {
            return Err(ElError::ShapeMismatch("epsilon must be > 0".into()));
        }
        if self.max_iterations < 1 {
            return Err(ElError::ShapeMismatch("max_iterations must be >= 1".into()));
        }
        if !(self.augmentation_scale > 0.0) {
            return Err(ElError::ShapeMismatch("augmentation_scale must be > 0".into()));
        }
        if self.hessian_ridge < 0.0 {
            return Err(ElError::ShapeMismatch("hessian_ridge must be >= 0".into()));
        }
        Ok(())
    }
}

/// Converged dual solution: multipliers, probability weights and diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    /// Lagrange multipliers, one per constraint column.
    pub lambda: DVector<f64>,
    /// Probability weights over the retained (non-artificial) rows; sum to 1.
    pub weights: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// True when the solution came from the augmented sample.
    pub augmented: bool,
    /// Final gradient norm of the dual objective.
    pub gradient_norm: f64,
    /// Infinity norm of `sum_i w_i U_i` over the reported rows and weights.
    pub residual_inf: f64,
    /// Dual objective at each accepted step, starting from lambda = 0.
    pub objective_trace: Vec<f64>,
}

/// Compact diagnostics for embedding in estimate results.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveSummary {
    pub iterations: usize,
    pub converged: bool,
    pub augmented: bool,
    pub gradient_norm: f64,
    pub residual_inf: f64,
}

impl DualSolution {
    pub fn summary(&self) -> SolveSummary {
        SolveSummary {
            iterations: self.iterations,
            converged: self.converged,
            augmented: self.augmented,
            gradient_norm: self.gradient_norm,
            residual_inf: self.residual_inf,
        }
    }
}

fn check_finite(m: &DMatrix<f64>) -> Result<(), ElError> {
    for col in 0..m.ncols() {
        for row in 0..m.nrows() {
            if !m[(row, col)].is_finite() {
                return Err(ElError::NonFinite { row, col });
            }
        }
    }
    Ok(())
}

/// Subtracts the target vector from every raw row.
pub fn center_constraints(
    raw_rows: &DMatrix<f64>,
    targets: &DVector<f64>,
) -> Result<ConstraintMatrix, ElError> {
    if raw_rows.ncols() != targets.len() {
        return Err(ElError::ShapeMismatch(format!(
            "raw rows have {} columns but targets have length {}",
            raw_rows.ncols(),
            targets.len()
        )));
    }
    check_finite(raw_rows)?;
    for (i, t) in targets.iter().enumerate() {
        if !t.is_finite() {
            return Err(ElError::NonFinite { row: 0, col: i });
        }
    }
    let mut centered = raw_rows.clone();
    for mut row in centered.row_iter_mut() {
        row -= targets.transpose();
    }
    ConstraintMatrix::new(centered)
}

/// Dual objective `sum_i log(1 + lambda'U_i)`.
pub fn dual_objective(lambda: &DVector<f64>, u: &ConstraintMatrix) -> Result<f64, ElError> {
    if lambda.len() != u.n_constraints() {
        return Err(ElError::ShapeMismatch(format!(
            "lambda has length {} but U has {} columns",
            lambda.len(),
            u.n_constraints()
        )));
    }
    objective_on(u.values(), lambda)
}

#[inline]
fn row_denom(rows: &DMatrix<f64>, lambda: &DVector<f64>, i: usize) -> f64 {
    let mut dot = 0.0;
    for j in 0..rows.ncols() {
        dot += rows[(i, j)] * lambda[j];
    }
    1.0 + dot
}

fn objective_on(rows: &DMatrix<f64>, lambda: &DVector<f64>) -> Result<f64, ElError> {
    let mut total = 0.0;
    for i in 0..rows.nrows() {
        let denom = row_denom(rows, lambda, i);
        if denom <= 0.0 {
            return Err(ElError::InfeasibleLambda { row: i });
        }
        total += denom.ln();
    }
    Ok(total)
}

/// Gradient `sum_i U_i / (1 + lambda'U_i)` of the dual objective.
fn gradient_on(rows: &DMatrix<f64>, lambda: &DVector<f64>) -> DVector<f64> {
    let r = rows.ncols();
    let mut grad = DVector::zeros(r);
    for i in 0..rows.nrows() {
        let denom = row_denom(rows, lambda, i);
        let scale = 1.0 / denom;
        for j in 0..r {
            grad[j] += scale * rows[(i, j)];
        }
    }
    grad
}

/// Negated Hessian `sum_i U_i U_i' / (1 + lambda'U_i)^2`, which is
/// positive semidefinite.
fn neg_hessian_on(rows: &DMatrix<f64>, lambda: &DVector<f64>) -> DMatrix<f64> {
    let r = rows.ncols();
    let mut h = DMatrix::zeros(r, r);
    for i in 0..rows.nrows() {
        let denom = row_denom(rows, lambda, i);
        let scale = 1.0 / (denom * denom);
        for j in 0..r {
            let uj = scale * rows[(i, j)];
            for k in j..r {
                h[(k, j)] += uj * rows[(i, k)];
            }
        }
    }
    h.fill_upper_triangle_with_lower_triangle();
    h
}

/// Solves `(A + ridge I) x = b` by Cholesky, escalating the ridge from the
/// caller's baseline through 1e-10..1e-6 of the mean diagonal.
fn solve_spd_with_ridge(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    base_ridge: f64,
) -> Result<DVector<f64>, ElError> {
    let r = a.nrows();
    let mean_diag = a.diagonal().sum() / r as f64;
    let scale = if mean_diag > 0.0 { mean_diag } else { 1.0 };
    let mut ridges = vec![base_ridge];
    for factor in [1e-10, 1e-8, 1e-6] {
        ridges.push(base_ridge + factor * scale);
    }
    for ridge in ridges {
        let mut m = a.clone();
        for i in 0..r {
            m[(i, i)] += ridge;
        }
        if let Some(chol) = m.cholesky() {
            let x = chol.solve(b);
            if x.iter().all(|v| v.is_finite()) {
                return Ok(x);
            }
        }
    }
    Err(ElError::SingularHessian)
}

/// Step-halving threshold below which the line search is declared stuck.
const GAMMA_FLOOR: f64 = 1e-12;

struct NewtonOutcome {
    lambda: DVector<f64>,
    iterations: usize,
    gradient_norm: f64,
    objective_trace: Vec<f64>,
}

/// Terminal refinement: undamped Newton steps accepted while the step norm
/// keeps contracting. Near the root the objective comparison used by the
/// line search is dominated by rounding noise, so the contraction test is
/// the reliable acceptance rule there.
fn polish(
    rows: &DMatrix<f64>,
    mut lambda: DVector<f64>,
    mut step: DVector<f64>,
    opts: &SolverOptions,
) -> (DVector<f64>, f64) {
    for _ in 0..3 {
        if step.norm() < 1e-15 {
            break;
        }
        let candidate = &lambda + &step;
        if objective_on(rows, &candidate).is_err() {
            break;
        }
        let grad = gradient_on(rows, &candidate);
        let neg_h = neg_hessian_on(rows, &candidate);
        match solve_spd_with_ridge(&neg_h, &grad, opts.hessian_ridge) {
            Ok(next) if next.norm() < step.norm() => {
                lambda = candidate;
                step = next;
            }
            _ => break,
        }
    }
    let norm = step.norm();
    (lambda, norm)
}

/// Modified Newton-Raphson search for the dual maximizer over the given rows.
fn newton_solve(rows: &DMatrix<f64>, opts: &SolverOptions) -> Result<NewtonOutcome, ElError> {
    let r = rows.ncols();
    let mut lambda = DVector::<f64>::zeros(r);
    let mut gamma: f64 = 1.0;
    let mut objective = 0.0; // l(0) = 0
    let mut trace = vec![objective];
    let mut t = 0usize;

    loop {
        let grad = gradient_on(rows, &lambda);
        let neg_h = neg_hessian_on(rows, &lambda);
        // delta2 = H^{-1} grad = -(-H)^{-1} grad; the update lambda - gamma*delta2
        // moves uphill.
        let step = solve_spd_with_ridge(&neg_h, &grad, opts.hessian_ridge)?;
        let mut stalled = false;

        if step.norm() >= opts.epsilon {
            // Halve gamma until the candidate stays feasible and does not
            // decrease the objective. A collapse of gamma with a small step
            // means the objective is flat at rounding resolution; a collapse
            // with a large step means no maximizer exists.
            loop {
                let candidate = &lambda + &step * gamma;
                if candidate == lambda {
                    // Damping shrank the update below the resolution of
                    // lambda itself.
                    if step.norm() < opts.epsilon.sqrt() {
                        stalled = true;
                        break;
                    }
                    return Err(ElError::HullViolation);
                }
                match objective_on(rows, &candidate) {
                    Ok(value) if value >= objective => {
                        lambda = candidate;
                        objective = value;
                        trace.push(value);
                        break;
                    }
                    _ => {
                        gamma /= 2.0;
                        if gamma < GAMMA_FLOOR {
                            if step.norm() < opts.epsilon.sqrt() {
                                stalled = true;
                                break;
                            }
                            return Err(ElError::HullViolation);
                        }
                    }
                }
            }
        }

        if step.norm() < opts.epsilon || stalled {
            let (lambda, final_norm) = polish(rows, lambda, step, opts);
            if stalled && final_norm >= opts.epsilon {
                return Err(ElError::ConvergenceFailure { max_iterations: opts.max_iterations });
            }
            return Ok(NewtonOutcome {
                gradient_norm: gradient_on(rows, &lambda).norm(),
                lambda,
                iterations: t,
                objective_trace: trace,
            });
        }

        t += 1;
        if t >= opts.max_iterations {
            return Err(ElError::ConvergenceFailure { max_iterations: opts.max_iterations });
        }
        gamma = 1.0 / ((t + 1) as f64).sqrt();
    }
}

/// True when some constraint column never changes sign (and is not all
/// zero), which puts the zero vector outside the interior of the hull.
fn has_one_sided_column(rows: &DMatrix<f64>) -> bool {
    (0..rows.ncols()).any(|j| {
        let col = rows.column(j);
        let any_pos = col.iter().any(|&v| v > 0.0);
        let any_neg = col.iter().any(|&v| v < 0.0);
        (any_pos || any_neg) && !(any_pos && any_neg)
    })
}

fn weights_from_lambda(rows: &DMatrix<f64>, lambda: &DVector<f64>) -> DVector<f64> {
    let raw: Vec<f64> =
        (0..rows.nrows()).map(|i| 1.0 / row_denom(rows, lambda, i)).collect();
    normalize_weights(&raw)
}

/// Kahan-compensated normalization so the weights sum to 1 at machine
/// precision regardless of the row count.
fn normalize_weights(raw: &[f64]) -> DVector<f64> {
    let total = kahan_sum(raw.iter().copied());
    DVector::from_iterator(raw.len(), raw.iter().map(|v| v / total))
}

pub(crate) fn kahan_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let y = v - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum
}

fn residual_inf(rows: &DMatrix<f64>, weights: &DVector<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for j in 0..rows.ncols() {
        let s = kahan_sum(rows.column(j).iter().zip(weights.iter()).map(|(u, w)| u * w));
        worst = worst.max(s.abs());
    }
    worst
}

/// Solves for the EL weights of `U`. When the plain iteration fails on the
/// hull condition (or fails to converge) and `auto_augment` is set, retries
/// on the augmented sample.
pub fn solve_weights(u: &ConstraintMatrix, opts: &SolverOptions) -> Result<DualSolution, ElError> {
    opts.validate()?;
    match solve_weights_plain(u, opts) {
        Ok(solution) => Ok(solution),
        Err(err @ (ElError::HullViolation | ElError::ConvergenceFailure { .. })) => {
            if opts.auto_augment {
                solve_weights_augmented(u, opts)
            } else {
                Err(err)
            }
        }
        Err(err) => Err(err),
    }
}

fn solve_weights_plain(u: &ConstraintMatrix, opts: &SolverOptions) -> Result<DualSolution, ElError> {
    let rows = u.values();
    let outcome = newton_solve(rows, opts).map_err(|err| match err {
        // A one-sided column means no multiplier exists, whatever the
        // iteration budget was.
        ElError::ConvergenceFailure { .. } if has_one_sided_column(rows) => ElError::HullViolation,
        other => other,
    })?;
    let weights = weights_from_lambda(rows, &outcome.lambda);
    let residual = residual_inf(rows, &weights);
    Ok(DualSolution {
        lambda: outcome.lambda,
        weights,
        iterations: outcome.iterations,
        converged: true,
        augmented: false,
        gradient_norm: outcome.gradient_norm,
        residual_inf: residual,
        objective_trace: outcome.objective_trace,
    })
}

/// Appends the two artificial rows `-s c* ubar` and `2 Ubar + s c* ubar`,
/// where `ubar` is the unit row mean and `c*` its inverse Mahalanobis
/// length under the sample covariance of the rows. The mean of the
/// augmented rows equals the original mean.
pub fn augment(u: &ConstraintMatrix, s: f64) -> Result<ConstraintMatrix, ElError> {
    if !(s > 0.0) {
        return Err(ElError::ShapeMismatch("augmentation scale must be > 0".into()));
    }
    let rows = u.values();
    let m = rows.nrows();
    let r = rows.ncols();

    let mean = rows.row_mean().transpose();
    let mean_norm = mean.norm();
    if mean_norm == 0.0 {
        return Err(ElError::ZeroMeanDirection);
    }
    let unit = &mean / mean_norm;

    // Sample covariance with denominator m - 1.
    let mut cov = DMatrix::<f64>::zeros(r, r);
    for row in rows.row_iter() {
        let d = row.transpose() - &mean;
        cov.syger(1.0 / (m - 1) as f64, &d, &d, 1.0);
    }
    cov.fill_upper_triangle_with_lower_triangle();

    let solved = cov.clone().cholesky().map(|c| c.solve(&unit)).or_else(|| {
        let mean_diag = cov.diagonal().sum() / r as f64;
        let ridge = 1e-8 * if mean_diag > 0.0 { mean_diag } else { 1.0 };
        let mut repaired = cov;
        for i in 0..r {
            repaired[(i, i)] += ridge;
        }
        repaired.cholesky().map(|c| c.solve(&unit))
    });
    let s_inv_u = solved.ok_or(ElError::SingularCovariance)?;
    let c_star = unit.dot(&s_inv_u).sqrt().recip();
    if !c_star.is_finite() {
        return Err(ElError::SingularCovariance);
    }

    let low = -&unit * (s * c_star);
    let high = &mean * 2.0 + &unit * (s * c_star);

    let mut augmented = DMatrix::<f64>::zeros(m + 2, r);
    augmented.rows_mut(0, m).copy_from(rows);
    augmented.row_mut(m).copy_from(&low.transpose());
    augmented.row_mut(m + 1).copy_from(&high.transpose());
    ConstraintMatrix::new(augmented)
}

/// Runs the Newton iteration on the augmented sample and reports the
/// renormalized weights of the real subjects.
pub fn solve_weights_augmented(
    u: &ConstraintMatrix,
    opts: &SolverOptions,
) -> Result<DualSolution, ElError> {
    opts.validate()?;
    let augmented = augment(u, opts.augmentation_scale)?;
    let outcome = newton_solve(augmented.values(), opts)?;

    // Drop the two artificial weights and renormalize; the artificial
    // points carry no outcome.
    let weights = weights_from_lambda(u.values(), &outcome.lambda);
    let residual = residual_inf(u.values(), &weights);
    Ok(DualSolution {
        lambda: outcome.lambda,
        weights,
        iterations: outcome.iterations,
        converged: true,
        augmented: true,
        gradient_norm: outcome.gradient_norm,
        residual_inf: residual,
        objective_trace: outcome.objective_trace,
    })
}

/// Uniform weights for an empty constraint set, reported in the same shape
/// as a converged solve.
pub fn uniform_solution(n_rows: usize) -> DualSolution {
    let w = 1.0 / n_rows as f64;
    DualSolution {
        lambda: DVector::zeros(0),
        weights: DVector::from_element(n_rows, w),
        iterations: 0,
        converged: true,
        augmented: false,
        gradient_norm: 0.0,
        residual_inf: 0.0,
        objective_trace: vec![0.0],
    }
}
