//! Treatment-effect estimators: the ELW family (complete outcomes,
//! missing outcomes, multiply robust), the own-arm-target comparators, and
//! the unadjusted / change-score baselines.
//!
//! Every weight-based estimator assembles one constraint matrix per arm
//! from working-model values on that arm's observed-outcome subjects,
//! centers it at pooled-sample (ELW) or own-arm (comparator) targets,
//! solves for the empirical-likelihood weights, and reports the difference
//! of the two weighted outcome means.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::el_core::{
    self, center_constraints, kahan_sum, solve_weights, ConstraintMatrix, DualSolution, ElError,
    SolveSummary, SolverOptions,
};
use crate::models::{
    assemble_model_set, predict_outcome, predict_propensity, ModelError, ModelSpec, OutcomeModel,
    WorkingModelSet,
};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("invalid trial data: {0}")]
    InvalidData(String),
    #[error("estimator requires complete outcomes but {0} are missing")]
    MissingOutcomesPresent(usize),
    #[error("empty constraint set for the {arm:?} arm in the missing-outcome regime")]
    EmptyConstraints { arm: Arm },
    #[error("baseline column {index} out of range for {cols} covariate columns")]
    BadColumn { index: usize, cols: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid estimator spec: {0}")]
    InvalidSpec(String),
    #[error("weight solve failed for the {arm:?} arm")]
    Solver {
        arm: Arm,
        #[source]
        source: ElError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Trial arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Treated,
    Control,
}

impl Arm {
    pub fn other(self) -> Arm {
        match self {
            Arm::Treated => Arm::Control,
            Arm::Control => Arm::Treated,
        }
    }
}

/// Per-subject trial records: treatment indicator, observation indicator,
/// outcome (present exactly when observed) and covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialData {
    w: Vec<u8>,
    r: Vec<u8>,
    y: Vec<Option<f64>>,
    x: DMatrix<f64>,
}

impl TrialData {
    pub fn new(
        w: Vec<u8>,
        r: Vec<u8>,
        y: Vec<Option<f64>>,
        x: DMatrix<f64>,
    ) -> Result<Self, EstimatorError> {
        let n = w.len();
        if r.len() != n || y.len() != n || x.nrows() != n {
            return Err(EstimatorError::InvalidData(format!(
                "inconsistent lengths: w={}, r={}, y={}, x rows={}",
                n,
                r.len(),
                y.len(),
                x.nrows()
            )));
        }
        for (i, &wi) in w.iter().enumerate() {
            if wi > 1 {
                return Err(EstimatorError::InvalidData(format!(
                    "treatment indicator must be 0 or 1 at subject {i}"
                )));
            }
            if r[i] > 1 {
                return Err(EstimatorError::InvalidData(format!(
                    "observation indicator must be 0 or 1 at subject {i}"
                )));
            }
            match (r[i], y[i]) {
                (1, Some(v)) if v.is_finite() => {}
                (0, None) => {}
                (1, Some(_)) => {
                    return Err(EstimatorError::InvalidData(format!(
                        "outcome at subject {i} is not finite"
                    )))
                }
                _ => {
                    return Err(EstimatorError::InvalidData(format!(
                        "outcome must be present exactly when observed (subject {i})"
                    )))
                }
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(EstimatorError::InvalidData("covariates contain a non-finite value".into()));
        }
        let data = Self { w, r, y, x };
        let (m, n_ctl) = (data.arm_size(Arm::Treated), data.arm_size(Arm::Control));
        if m < 2 || n_ctl < 2 {
            return Err(EstimatorError::InvalidData(format!(
                "need at least 2 subjects per arm, got m={m}, n={n_ctl}"
            )));
        }
        if data.has_missing()
            && (data.observed_size(Arm::Treated) < 2 || data.observed_size(Arm::Control) < 2)
        {
            return Err(EstimatorError::InvalidData(
                "need at least 2 observed outcomes per arm in the missing regime".into(),
            ));
        }
        Ok(data)
    }

    pub fn n_total(&self) -> usize {
        self.w.len()
    }

    pub fn arm_size(&self, arm: Arm) -> usize {
        let target = matches!(arm, Arm::Treated) as u8;
        self.w.iter().filter(|&&w| w == target).count()
    }

    pub fn observed_size(&self, arm: Arm) -> usize {
        let target = matches!(arm, Arm::Treated) as u8;
        self.w.iter().zip(&self.r).filter(|(&w, &r)| w == target && r == 1).count()
    }

    pub fn has_missing(&self) -> bool {
        self.r.iter().any(|&r| r == 0)
    }

    /// Estimated treatment probability m/N.
    pub fn delta_hat(&self) -> f64 {
        self.arm_size(Arm::Treated) as f64 / self.n_total() as f64
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn treatment(&self) -> &[u8] {
        &self.w
    }

    pub fn observed(&self) -> &[u8] {
        &self.r
    }

    pub fn outcome(&self, subject: usize) -> Option<f64> {
        self.y[subject]
    }

    fn select_rows(&self, keep: impl Fn(usize) -> bool) -> Vec<usize> {
        (0..self.n_total()).filter(|&i| keep(i)).collect()
    }

    fn arm_mask(&self, arm: Arm) -> u8 {
        matches!(arm, Arm::Treated) as u8
    }

    fn x_rows(&self, indices: &[usize]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(indices.len(), self.x.ncols());
        for (k, &i) in indices.iter().enumerate() {
            out.row_mut(k).copy_from(&self.x.row(i));
        }
        out
    }

    /// Covariates of the full arm, missing-outcome subjects included.
    pub fn full_arm(&self, arm: Arm) -> DMatrix<f64> {
        let target = self.arm_mask(arm);
        self.x_rows(&self.select_rows(|i| self.w[i] == target))
    }

    /// Covariates and outcomes of the arm's observed-outcome subjects, in
    /// original row order.
    pub fn observed_arm(&self, arm: Arm) -> (DMatrix<f64>, DVector<f64>) {
        let target = self.arm_mask(arm);
        let idx = self.select_rows(|i| self.w[i] == target && self.r[i] == 1);
        let y = DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.y[i].unwrap()));
        (self.x_rows(&idx), y)
    }

    /// Covariates and observation indicator of the full arm.
    pub fn full_arm_with_indicator(&self, arm: Arm) -> (DMatrix<f64>, DVector<f64>) {
        let target = self.arm_mask(arm);
        let idx = self.select_rows(|i| self.w[i] == target);
        let r = DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.r[i] as f64));
        (self.x_rows(&idx), r)
    }

    /// New dataset from the given subject rows (with repetition), as drawn
    /// by a bootstrap resample.
    pub fn resample(&self, indices: &[usize]) -> Result<TrialData, EstimatorError> {
        let w = indices.iter().map(|&i| self.w[i]).collect();
        let r = indices.iter().map(|&i| self.r[i]).collect();
        let y = indices.iter().map(|&i| self.y[i]).collect();
        TrialData::new(w, r, y, self.x_rows(indices))
    }

    /// Subject indices of the arm (full), in row order.
    pub fn arm_indices(&self, arm: Arm) -> Vec<usize> {
        let target = self.arm_mask(arm);
        self.select_rows(|i| self.w[i] == target)
    }
}

/// Which sample the calibration targets average over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TargetScope {
    /// Both full arms pooled (the ELW convention).
    Pooled,
    /// The subject's own full arm (the comparator convention).
    OwnArm,
}

/// Estimator identity tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Elw,
    ElwMis,
    ElwMr,
    Qz,
    Hw,
    Unadjusted,
    ChangeScore,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::Elw => "elw",
            Method::ElwMis => "elw_mis",
            Method::ElwMr => "elw_mr",
            Method::Qz => "qz",
            Method::Hw => "hw",
            Method::Unadjusted => "unadjusted",
            Method::ChangeScore => "change_score",
        }
    }
}

/// Per-arm solver diagnostics surfaced with each weighted estimate.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    pub treated: Option<SolveSummary>,
    pub control: Option<SolveSummary>,
    /// Set when any propensity model carried a separation flag; the
    /// estimate is still reported.
    pub separation: bool,
}

/// A point estimate with its weights and solve diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    pub theta_hat: f64,
    pub method: Method,
    /// Weights over the treated arm's observed-outcome subjects.
    pub weights_treated: Option<DVector<f64>>,
    /// Weights over the control arm's observed-outcome subjects.
    pub weights_control: Option<DVector<f64>>,
    pub diagnostics: Diagnostics,
}

fn column_sum(values: &DMatrix<f64>, col: usize) -> f64 {
    kahan_sum(values.column(col).iter().copied())
}

/// Columnwise mean over both full arms pooled.
pub fn pooled_targets(
    treated_full: &DMatrix<f64>,
    control_full: &DMatrix<f64>,
) -> Result<DVector<f64>, EstimatorError> {
    if treated_full.ncols() != control_full.ncols() {
        return Err(EstimatorError::ShapeMismatch(format!(
            "treated values have {} columns, control values have {}",
            treated_full.ncols(),
            control_full.ncols()
        )));
    }
    let n = (treated_full.nrows() + control_full.nrows()) as f64;
    Ok(DVector::from_iterator(
        treated_full.ncols(),
        (0..treated_full.ncols())
            .map(|j| (column_sum(treated_full, j) + column_sum(control_full, j)) / n),
    ))
}

/// Columnwise mean over one full arm.
pub fn arm_targets(full_arm: &DMatrix<f64>) -> DVector<f64> {
    let n = full_arm.nrows() as f64;
    DVector::from_iterator(full_arm.ncols(), (0..full_arm.ncols()).map(|j| column_sum(full_arm, j) / n))
}

struct ArmModels<'a> {
    propensity: &'a [crate::models::LogisticModel],
    outcome: &'a [OutcomeModel],
}

fn arm_models<'a>(set: &'a WorkingModelSet, arm: Arm) -> ArmModels<'a> {
    match arm {
        Arm::Treated => ArmModels { propensity: &set.p1_models, outcome: &set.g_models },
        Arm::Control => ArmModels { propensity: &set.p0_models, outcome: &set.h_models },
    }
}

/// Raw constraint columns (model values on the arm's observed subjects)
/// and their calibration targets. `None` when the arm has no constraints.
fn arm_constraints(
    data: &TrialData,
    arm: Arm,
    set: &WorkingModelSet,
    scope: TargetScope,
) -> Result<Option<ConstraintMatrix>, EstimatorError> {
    let models = arm_models(set, arm);
    let width: usize =
        models.propensity.len() + models.outcome.iter().map(|m| m.width()).sum::<usize>();
    if width == 0 {
        return Ok(None);
    }

    let (x_obs, _) = data.observed_arm(arm);
    let x_own = data.full_arm(arm);
    let x_other = data.full_arm(arm.other());
    let m0 = x_obs.nrows();

    let mut rows = DMatrix::<f64>::zeros(m0, width);
    let mut targets = DVector::<f64>::zeros(width);
    let mut col = 0usize;

    // Propensity blocks come first, then outcome blocks; the order is fixed
    // so diagnostics are comparable across runs.
    for model in models.propensity {
        let obs = predict_propensity(model, &x_obs)?;
        rows.column_mut(col).copy_from(&obs);
        let own = predict_propensity(model, &x_own)?;
        targets[col] = match scope {
            TargetScope::Pooled => {
                let other = predict_propensity(model, &x_other)?;
                (kahan_sum(own.iter().copied()) + kahan_sum(other.iter().copied()))
                    / (own.len() + other.len()) as f64
            }
            TargetScope::OwnArm => kahan_sum(own.iter().copied()) / own.len() as f64,
        };
        col += 1;
    }
    for model in models.outcome {
        let obs = predict_outcome(model, &x_obs)?;
        let own = predict_outcome(model, &x_own)?;
        let k = obs.ncols();
        rows.columns_mut(col, k).copy_from(&obs);
        let block_targets = match scope {
            TargetScope::Pooled => {
                let other = predict_outcome(model, &x_other)?;
                pooled_targets(&own, &other)?
            }
            TargetScope::OwnArm => arm_targets(&own),
        };
        targets.rows_mut(col, k).copy_from(&block_targets);
        col += k;
    }

    let centered =
        center_constraints(&rows, &targets).map_err(|source| EstimatorError::Solver { arm, source })?;
    Ok(Some(centered))
}

struct ArmEstimate {
    weights: DVector<f64>,
    mean: f64,
    summary: Option<SolveSummary>,
}

fn weighted_arm_mean(y: &DVector<f64>, weights: &DVector<f64>) -> f64 {
    kahan_sum(y.iter().zip(weights.iter()).map(|(yi, wi)| yi * wi))
}

fn estimate_arm(
    data: &TrialData,
    arm: Arm,
    set: &WorkingModelSet,
    scope: TargetScope,
    opts: &SolverOptions,
) -> Result<ArmEstimate, EstimatorError> {
    let (_, y) = data.observed_arm(arm);
    match arm_constraints(data, arm, set, scope)? {
        None => {
            // No constraints: uniform weights, and the exact unadjusted
            // arm mean.
            let m0 = y.len();
            let mean = kahan_sum(y.iter().copied()) / m0 as f64;
            let sol = el_core::uniform_solution(m0);
            Ok(ArmEstimate { weights: sol.weights, mean, summary: None })
        }
        Some(constraints) => {
            let sol: DualSolution = solve_weights(&constraints, opts)
                .map_err(|source| EstimatorError::Solver { arm, source })?;
            let mean = weighted_arm_mean(&y, &sol.weights);
            let summary = Some(sol.summary());
            Ok(ArmEstimate { weights: sol.weights, mean, summary })
        }
    }
}

fn estimate_weighted(
    data: &TrialData,
    set: &WorkingModelSet,
    scope: TargetScope,
    method: Method,
    opts: &SolverOptions,
) -> Result<EstimateResult, EstimatorError> {
    let treated = estimate_arm(data, Arm::Treated, set, scope, opts)?;
    let control = estimate_arm(data, Arm::Control, set, scope, opts)?;
    Ok(EstimateResult {
        theta_hat: treated.mean - control.mean,
        method,
        weights_treated: Some(treated.weights),
        weights_control: Some(control.weights),
        diagnostics: Diagnostics {
            treated: treated.summary,
            control: control.summary,
            separation: set.any_separation(),
        },
    })
}

/// ELW estimator for complete outcomes: one outcome-side model per arm,
/// pooled targets.
pub fn estimate_elw(
    data: &TrialData,
    g: &OutcomeModel,
    h: &OutcomeModel,
    opts: &SolverOptions,
) -> Result<EstimateResult, EstimatorError> {
    let missing = data.n_total() - data.observed_size(Arm::Treated) - data.observed_size(Arm::Control);
    if missing > 0 {
        return Err(EstimatorError::MissingOutcomesPresent(missing));
    }
    let set = WorkingModelSet {
        g_models: vec![g.clone()],
        h_models: vec![h.clone()],
        ..WorkingModelSet::default()
    };
    estimate_weighted(data, &set, TargetScope::Pooled, Method::Elw, opts)
}

fn multi_model(set: &WorkingModelSet) -> bool {
    set.p1_models.len() > 1
        || set.p0_models.len() > 1
        || set.g_models.len() > 1
        || set.h_models.len() > 1
}

fn require_constraints(set: &WorkingModelSet) -> Result<(), EstimatorError> {
    if set.p1_models.is_empty() && set.g_models.is_empty() {
        return Err(EstimatorError::EmptyConstraints { arm: Arm::Treated });
    }
    if set.p0_models.is_empty() && set.h_models.is_empty() {
        return Err(EstimatorError::EmptyConstraints { arm: Arm::Control });
    }
    Ok(())
}

/// ELW estimator under missing-at-random outcomes: propensity and outcome
/// model values calibrated to pooled-sample means. With one working model
/// per condition this is the doubly robust estimator; with several it is
/// the multiply robust one.
pub fn estimate_elw_missing(
    data: &TrialData,
    set: &WorkingModelSet,
    opts: &SolverOptions,
) -> Result<EstimateResult, EstimatorError> {
    require_constraints(set)?;
    let method = if multi_model(set) { Method::ElwMr } else { Method::ElwMis };
    estimate_weighted(data, set, TargetScope::Pooled, method, opts)
}

/// Comparator with single working models and own-arm targets.
pub fn estimate_qz(
    data: &TrialData,
    set: &WorkingModelSet,
    opts: &SolverOptions,
) -> Result<EstimateResult, EstimatorError> {
    require_constraints(set)?;
    estimate_weighted(data, set, TargetScope::OwnArm, Method::Qz, opts)
}

/// Comparator with multiple working models and own-arm targets.
pub fn estimate_hw(
    data: &TrialData,
    set: &WorkingModelSet,
    opts: &SolverOptions,
) -> Result<EstimateResult, EstimatorError> {
    require_constraints(set)?;
    estimate_weighted(data, set, TargetScope::OwnArm, Method::Hw, opts)
}

fn observed_arm_mean(data: &TrialData, arm: Arm) -> f64 {
    let (_, y) = data.observed_arm(arm);
    kahan_sum(y.iter().copied()) / y.len() as f64
}

/// Difference of arm sample means over observed outcomes.
pub fn estimate_unadjusted(data: &TrialData) -> EstimateResult {
    let theta = observed_arm_mean(data, Arm::Treated) - observed_arm_mean(data, Arm::Control);
    EstimateResult {
        theta_hat: theta,
        method: Method::Unadjusted,
        weights_treated: None,
        weights_control: None,
        diagnostics: Diagnostics::default(),
    }
}

/// Unadjusted difference minus the arm difference in the designated
/// baseline covariate.
pub fn estimate_change_score(
    data: &TrialData,
    baseline_column: usize,
) -> Result<EstimateResult, EstimatorError> {
    if baseline_column >= data.covariates().ncols() {
        return Err(EstimatorError::BadColumn {
            index: baseline_column,
            cols: data.covariates().ncols(),
        });
    }
    let baseline_mean = |arm: Arm| {
        let target = matches!(arm, Arm::Treated) as u8;
        let idx: Vec<usize> = (0..data.n_total())
            .filter(|&i| data.treatment()[i] == target && data.observed()[i] == 1)
            .collect();
        let vals: Vec<f64> = idx.iter().map(|&i| data.covariates()[(i, baseline_column)]).collect();
        kahan_sum(vals.iter().copied()) / vals.len() as f64
    };
    let theta = observed_arm_mean(data, Arm::Treated) - observed_arm_mean(data, Arm::Control)
        - (baseline_mean(Arm::Treated) - baseline_mean(Arm::Control));
    Ok(EstimateResult {
        theta_hat: theta,
        method: Method::ChangeScore,
        weights_treated: None,
        weights_control: None,
        diagnostics: Diagnostics::default(),
    })
}

/// A complete estimation recipe: which estimator to run, which working
/// models to fit from scratch on the data at hand, and the solver options.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSpec {
    pub method: Method,
    pub models: Vec<ModelSpec>,
    pub baseline_column: Option<usize>,
    pub solver: SolverOptions,
    /// Report label; defaults to the method tag.
    pub label: Option<String>,
}

impl EstimatorSpec {
    pub fn new(method: Method) -> Self {
        Self { method, models: Vec::new(), baseline_column: None, solver: SolverOptions::default(), label: None }
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.method.tag().to_string())
    }
}

/// Fits the spec's models on `data` and runs the requested estimator.
/// Nuisance models are always refit, so resampled datasets propagate their
/// fitting variability.
pub fn run_estimator(
    spec: &EstimatorSpec,
    data: &TrialData,
) -> Result<EstimateResult, EstimatorError> {
    match spec.method {
        Method::Unadjusted => Ok(estimate_unadjusted(data)),
        Method::ChangeScore => {
            let col = spec.baseline_column.ok_or_else(|| {
                EstimatorError::InvalidSpec("change_score requires a baseline column".into())
            })?;
            estimate_change_score(data, col)
        }
        Method::Elw => {
            let set = assemble_model_set(&spec.models, data)?;
            if set.g_models.len() != 1 || set.h_models.len() != 1 || !set.p1_models.is_empty() || !set.p0_models.is_empty() {
                return Err(EstimatorError::InvalidSpec(
                    "elw requires exactly one outcome model per arm and no propensity models".into(),
                ));
            }
            estimate_elw(data, &set.g_models[0].clone(), &set.h_models[0].clone(), &spec.solver)
        }
        Method::ElwMis | Method::ElwMr => {
            let set = assemble_model_set(&spec.models, data)?;
            estimate_elw_missing(data, &set, &spec.solver)
        }
        Method::Qz => {
            let set = assemble_model_set(&spec.models, data)?;
            estimate_qz(data, &set, &spec.solver)
        }
        Method::Hw => {
            let set = assemble_model_set(&spec.models, data)?;
            estimate_hw(data, &set, &spec.solver)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::IdentityModel;
    use nalgebra::dmatrix;

    fn complete_data(w: Vec<u8>, y: Vec<f64>, x: DMatrix<f64>) -> TrialData {
        let n = w.len();
        TrialData::new(w, vec![1; n], y.into_iter().map(Some).collect(), x).unwrap()
    }

    #[test]
    fn trial_data_rejects_outcome_mismatch() {
        let err = TrialData::new(
            vec![1, 1, 0, 0],
            vec![1, 0, 1, 1],
            vec![Some(1.0), Some(2.0), Some(3.0), Some(4.0)],
            DMatrix::zeros(4, 1),
        )
        .unwrap_err();
        assert!(matches!(err, EstimatorError::InvalidData(_)));
    }

    #[test]
    fn pooled_targets_average_both_arms() {
        let t = dmatrix![1.0; 3.0];
        let c = dmatrix![5.0; 7.0];
        let out = pooled_targets(&t, &c).unwrap();
        assert_eq!(out[0], 4.0);
    }

    #[test]
    fn pooled_equals_arm_mean_for_identical_arms() {
        let t = dmatrix![1.5, 2.0; 0.5, -1.0; 3.0, 0.25];
        let pooled = pooled_targets(&t, &t).unwrap();
        let own = arm_targets(&t);
        assert_eq!(pooled, own);
    }

    #[test]
    fn arm_targets_single_column() {
        assert_eq!(arm_targets(&dmatrix![1.0; 3.0])[0], 2.0);
        assert_eq!(arm_targets(&dmatrix![4.2; 4.2; 4.2])[0], 4.2);
    }

    #[test]
    fn empty_constraints_reduce_to_unadjusted_exactly() {
        let x = dmatrix![1.0; 2.0; 3.0; 4.0; 5.0; 6.0];
        let data = complete_data(
            vec![1, 1, 1, 0, 0, 0],
            vec![1.0, 2.0, 3.5, 0.5, 1.5, 1.0],
            x,
        );
        let empty = OutcomeModel::Identity(IdentityModel { feature_indices: vec![] });
        let elw = estimate_elw(&data, &empty, &empty, &SolverOptions::default()).unwrap();
        let unadj = estimate_unadjusted(&data);
        assert_eq!(elw.theta_hat, unadj.theta_hat);
        let wt = elw.weights_treated.unwrap();
        assert!(wt.iter().all(|&w| (w - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn symmetric_arms_give_uniform_weights_and_hand_theta() {
        // Both arms share x values {1, 3}; pooled mean 2 centers each arm
        // symmetrically, so lambda = 0 and theta = 2 - 1 = 1.
        let x = dmatrix![1.0; 3.0; 1.0; 3.0];
        let data = complete_data(vec![1, 1, 0, 0], vec![1.0, 3.0, 1.0, 1.0], x);
        let ident = OutcomeModel::Identity(IdentityModel { feature_indices: vec![0] });
        let out = estimate_elw(&data, &ident, &ident, &SolverOptions::default()).unwrap();
        let wt = out.weights_treated.as_ref().unwrap();
        assert!((wt[0] - 0.5).abs() < 1e-10);
        assert!((out.theta_hat - 1.0).abs() < 1e-10);
    }

    #[test]
    fn elw_rejects_missing_outcomes() {
        let data = TrialData::new(
            vec![1, 1, 1, 0, 0, 0],
            vec![1, 1, 0, 1, 1, 1],
            vec![Some(1.0), Some(2.0), None, Some(0.0), Some(1.0), Some(2.0)],
            DMatrix::zeros(6, 1),
        )
        .unwrap();
        let ident = OutcomeModel::Identity(IdentityModel { feature_indices: vec![0] });
        let err = estimate_elw(&data, &ident, &ident, &SolverOptions::default()).unwrap_err();
        assert!(matches!(err, EstimatorError::MissingOutcomesPresent(1)));
    }

    #[test]
    fn unadjusted_difference_of_means() {
        let data = complete_data(
            vec![1, 1, 1, 0, 0],
            vec![1.0, 2.0, 3.0, 0.0, 1.0],
            DMatrix::zeros(5, 1),
        );
        assert!((estimate_unadjusted(&data).theta_hat - 1.5).abs() < 1e-12);
    }

    #[test]
    fn unadjusted_equal_arms_is_zero() {
        let data = complete_data(
            vec![1, 1, 0, 0],
            vec![2.0, 4.0, 2.0, 4.0],
            DMatrix::zeros(4, 1),
        );
        assert_eq!(estimate_unadjusted(&data).theta_hat, 0.0);
    }

    #[test]
    fn change_score_subtracts_baseline_difference() {
        let x = dmatrix![1.0; 1.0; 0.5; 0.5];
        let data = complete_data(vec![1, 1, 0, 0], vec![2.0, 2.0, 1.0, 1.0], x);
        let out = estimate_change_score(&data, 0).unwrap();
        assert!((out.theta_hat - 0.5).abs() < 1e-12);
    }

    #[test]
    fn change_score_with_identical_baseline_equals_unadjusted() {
        let x = dmatrix![2.0; 2.0; 2.0; 2.0];
        let data = complete_data(vec![1, 1, 0, 0], vec![3.0, 5.0, 1.0, 2.0], x);
        let cs = estimate_change_score(&data, 0).unwrap();
        let unadj = estimate_unadjusted(&data);
        assert!((cs.theta_hat - unadj.theta_hat).abs() < 1e-12);
    }

    #[test]
    fn change_score_rejects_bad_column() {
        let data = complete_data(vec![1, 1, 0, 0], vec![1.0; 4], DMatrix::zeros(4, 1));
        assert!(matches!(
            estimate_change_score(&data, 3),
            Err(EstimatorError::BadColumn { index: 3, cols: 1 })
        ));
    }

    #[test]
    fn missing_regime_with_no_missing_matches_elw_exactly() {
        let x = dmatrix![0.4; 1.2; -0.3; 0.9; 2.0; -1.1; 0.1; 1.5];
        let data = complete_data(
            vec![1, 1, 1, 1, 0, 0, 0, 0],
            vec![1.0, 2.0, 0.5, 1.7, 0.2, -0.4, 1.1, 0.8],
            x,
        );
        let ident = OutcomeModel::Identity(IdentityModel { feature_indices: vec![0] });
        let set = WorkingModelSet {
            g_models: vec![ident.clone()],
            h_models: vec![ident.clone()],
            ..WorkingModelSet::default()
        };
        let a = estimate_elw(&data, &ident, &ident, &SolverOptions::default()).unwrap();
        let b = estimate_elw_missing(&data, &set, &SolverOptions::default()).unwrap();
        assert_eq!(a.theta_hat, b.theta_hat);
        assert_eq!(a.weights_treated, b.weights_treated);
        assert_eq!(b.method, Method::ElwMis);
    }

    #[test]
    fn identical_arm_covariates_make_qz_equal_elw_mis() {
        // Same covariate rows in both arms: pooled mean equals each arm
        // mean bit-for-bit, so the two target conventions coincide.
        let x = dmatrix![0.3; 1.9; -0.7; 1.1; 0.3; 1.9; -0.7; 1.1];
        let data = TrialData::new(
            vec![1, 1, 1, 1, 0, 0, 0, 0],
            vec![1, 1, 0, 1, 1, 0, 1, 1],
            vec![
                Some(1.0),
                Some(2.0),
                None,
                Some(0.7),
                Some(0.5),
                None,
                Some(1.3),
                Some(0.2),
            ],
            x,
        )
        .unwrap();
        let ident = OutcomeModel::Identity(IdentityModel { feature_indices: vec![0] });
        let set = WorkingModelSet {
            g_models: vec![ident.clone()],
            h_models: vec![ident],
            ..WorkingModelSet::default()
        };
        let mis = estimate_elw_missing(&data, &set, &SolverOptions::default()).unwrap();
        let qz = estimate_qz(&data, &set, &SolverOptions::default()).unwrap();
        assert_eq!(mis.theta_hat, qz.theta_hat);
        assert_eq!(mis.weights_treated, qz.weights_treated);
    }

    #[test]
    fn missing_regime_requires_constraints_per_arm() {
        let data = TrialData::new(
            vec![1, 1, 1, 0, 0, 0],
            vec![1, 1, 0, 1, 1, 1],
            vec![Some(1.0), Some(2.0), None, Some(0.0), Some(1.0), Some(2.0)],
            DMatrix::zeros(6, 1),
        )
        .unwrap();
        let set = WorkingModelSet::default();
        assert!(matches!(
            estimate_elw_missing(&data, &set, &SolverOptions::default()),
            Err(EstimatorError::EmptyConstraints { arm: Arm::Treated })
        ));
    }

    #[test]
    fn outcome_shift_leaves_theta_unchanged() {
        let x = dmatrix![0.4, 1.0; 1.2, -0.5; -0.3, 0.8; 0.9, 0.3; 2.0, -1.0; -1.1, 0.6];
        let y = vec![1.0, 2.0, 0.5, 0.2, -0.4, 1.1];
        let w = vec![1u8, 1, 1, 0, 0, 0];
        let shifted: Vec<f64> = y.iter().map(|v| v + 250.0).collect();
        let base = complete_data(w.clone(), y, x.clone());
        let moved = complete_data(w, shifted, x);
        let ident = OutcomeModel::Identity(IdentityModel { feature_indices: vec![0, 1] });
        let a = estimate_elw(&base, &ident, &ident, &SolverOptions::default()).unwrap();
        let b = estimate_elw(&moved, &ident, &ident, &SolverOptions::default()).unwrap();
        assert!((a.theta_hat - b.theta_hat).abs() < 1e-9);
        assert_eq!(a.weights_treated, b.weights_treated);
    }

    #[test]
    fn weighted_estimates_satisfy_calibration() {
        let x = dmatrix![0.4; 1.2; -0.3; 0.9; 2.0; -1.1; 0.1; 1.5; 0.6; -0.2];
        let data = complete_data(
            vec![1, 1, 1, 1, 1, 0, 0, 0, 0, 0],
            vec![1.0, 2.0, 0.5, 1.7, 0.9, 0.2, -0.4, 1.1, 0.8, 0.3],
            x.clone(),
        );
        let ident = OutcomeModel::Identity(IdentityModel { feature_indices: vec![0] });
        let out = estimate_elw(&data, &ident, &ident, &SolverOptions::default()).unwrap();
        let pooled = x.column(0).sum() / 10.0;
        let wt = out.weights_treated.unwrap();
        let treated_x: Vec<f64> = (0..5).map(|i| x[(i, 0)]).collect();
        let calibrated: f64 = wt.iter().zip(&treated_x).map(|(w, v)| w * v).sum();
        assert!((calibrated - pooled).abs() <= 1e-8, "calibration residual {}", calibrated - pooled);
    }
}
