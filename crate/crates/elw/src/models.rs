//! Working nuisance models: parametric outcome regressions fit by least
//! squares, observation-propensity models fit by binomial maximum
//! likelihood, and identity pass-throughs. Several candidates per arm can
//! be packaged together for multiply robust estimation.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::estimators::{Arm, TrialData};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("response must contain both classes")]
    OneClass,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("model for {arm:?} arm ({family}, index {index}): {source}")]
    Annotated {
        arm: Arm,
        family: &'static str,
        index: usize,
        #[source]
        source: Box<ModelError>,
    },
    #[error("model set must contain at least one constraint source per arm in use")]
    EmptyModelSet,
    #[error("feature index {index} out of range for {cols} covariate columns")]
    BadFeature { index: usize, cols: usize },
    #[error("not enough rows to fit: need more than {need}, got {got}")]
    TooFewRows { need: usize, got: usize },
}

/// Linear outcome regression, intercept first.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub coefficients: DVector<f64>,
    pub feature_indices: Vec<usize>,
}

/// Logistic model on the logit scale, intercept first.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub coefficients: DVector<f64>,
    pub feature_indices: Vec<usize>,
    pub converged: bool,
    pub separation_flag: bool,
}

/// Pass-through of the selected covariate columns.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityModel {
    pub feature_indices: Vec<usize>,
}

/// An outcome-side working model: one fitted column or an identity block.
#[derive(Debug, Clone, PartialEq)]
pub enum OutcomeModel {
    Identity(IdentityModel),
    Linear(LinearModel),
}

impl OutcomeModel {
    /// Number of constraint columns the model contributes.
    pub fn width(&self) -> usize {
        match self {
            OutcomeModel::Identity(m) => m.feature_indices.len(),
            OutcomeModel::Linear(_) => 1,
        }
    }
}

/// Candidate models per arm: propensity lists for the treated and control
/// observation mechanisms, outcome lists for the two regressions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WorkingModelSet {
    pub p1_models: Vec<LogisticModel>,
    pub p0_models: Vec<LogisticModel>,
    pub g_models: Vec<OutcomeModel>,
    pub h_models: Vec<OutcomeModel>,
}

impl WorkingModelSet {
    pub fn any_separation(&self) -> bool {
        self.p1_models.iter().chain(&self.p0_models).any(|m| m.separation_flag)
    }
}

fn design_with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let p = x.ncols();
    let mut d = DMatrix::zeros(n, p + 1);
    d.column_mut(0).fill(1.0);
    d.columns_mut(1, p).copy_from(x);
    d
}

/// Ordinary least squares with an intercept column prepended.
pub fn fit_ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<LinearModel, ModelError> {
    let n = x.nrows();
    let p = x.ncols();
    if y.len() != n {
        return Err(ModelError::ShapeMismatch(format!(
            "{} rows in X but {} responses",
            n,
            y.len()
        )));
    }
    if n <= p + 1 {
        return Err(ModelError::TooFewRows { need: p + 1, got: n });
    }
    let design = design_with_intercept(x);
    let svd = design.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    let tol = max_sv * (n.max(p + 1) as f64) * f64::EPSILON;
    if svd.singular_values.min() <= tol {
        return Err(ModelError::RankDeficient);
    }
    let coefficients = svd.solve(y, tol).map_err(|_| ModelError::RankDeficient)?;
    Ok(LinearModel { coefficients, feature_indices: (0..p).collect() })
}

/// OLS restricted to the named covariate columns of the full matrix.
pub fn fit_ols_on(
    x_full: &DMatrix<f64>,
    features: &[usize],
    y: &DVector<f64>,
) -> Result<LinearModel, ModelError> {
    let sub = select_columns(x_full, features)?;
    let mut model = fit_ols(&sub, y)?;
    model.feature_indices = features.to_vec();
    Ok(model)
}

pub fn select_columns(x: &DMatrix<f64>, features: &[usize]) -> Result<DMatrix<f64>, ModelError> {
    for &j in features {
        if j >= x.ncols() {
            return Err(ModelError::BadFeature { index: j, cols: x.ncols() });
        }
    }
    let mut out = DMatrix::zeros(x.nrows(), features.len());
    for (k, &j) in features.iter().enumerate() {
        out.column_mut(k).copy_from(&x.column(j));
    }
    Ok(out)
}

/// Model values as constraint columns: a fitted column for a regression,
/// the selected columns verbatim for an identity block.
pub fn predict_outcome(model: &OutcomeModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>, ModelError> {
    match model {
        OutcomeModel::Identity(m) => select_columns(x, &m.feature_indices),
        OutcomeModel::Linear(m) => {
            let sub = select_columns(x, &m.feature_indices)?;
            if m.coefficients.len() != sub.ncols() + 1 {
                return Err(ModelError::ShapeMismatch(format!(
                    "{} coefficients for {} features",
                    m.coefficients.len(),
                    sub.ncols()
                )));
            }
            let design = design_with_intercept(&sub);
            let fitted = design * &m.coefficients;
            Ok(DMatrix::from_column_slice(fitted.len(), 1, fitted.as_slice()))
        }
    }
}

fn expit(eta: f64) -> f64 {
    let p = 1.0 / (1.0 + (-eta).exp());
    p.clamp(1e-12, 1.0 - 1e-12)
}

const LOGISTIC_MAX_ITER: usize = 100;
const LOGISTIC_SCORE_TOL: f64 = 1e-6;
// Iterate past the contract tolerance; Newton gets the extra digits in one
// or two more steps.
const LOGISTIC_INTERNAL_TOL: f64 = 1e-10;
const SEPARATION_COEF_BOUND: f64 = 30.0;

/// Binomial maximum likelihood by Newton-Raphson from the zero vector.
/// Separation is reported through the flag rather than as an error.
pub fn fit_logistic(x: &DMatrix<f64>, r: &DVector<f64>) -> Result<LogisticModel, ModelError> {
    let n = x.nrows();
    let p = x.ncols();
    if r.len() != n {
        return Err(ModelError::ShapeMismatch(format!(
            "{} rows in X but {} responses",
            n,
            r.len()
        )));
    }
    if n < p + 2 {
        return Err(ModelError::TooFewRows { need: p + 2, got: n });
    }
    let ones = r.iter().filter(|&&v| v == 1.0).count();
    if ones == 0 || ones == n {
        return Err(ModelError::OneClass);
    }
    if r.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(ModelError::ShapeMismatch("response must be 0/1".into()));
    }

    let design = design_with_intercept(x);
    let q = p + 1;
    let mut beta = DVector::<f64>::zeros(q);
    let mut converged = false;

    for _ in 0..LOGISTIC_MAX_ITER {
        let eta = &design * &beta;
        let probs = DVector::from_iterator(n, eta.iter().map(|&e| expit(e)));
        let resid = r - &probs;
        let score = design.transpose() * &resid;
        if score.amax() <= LOGISTIC_SCORE_TOL {
            converged = true;
        }
        if score.amax() <= LOGISTIC_INTERNAL_TOL {
            break;
        }
        let mut info = DMatrix::<f64>::zeros(q, q);
        for i in 0..n {
            let w = probs[i] * (1.0 - probs[i]);
            let row = design.row(i).transpose();
            info.syger(w, &row, &row, 1.0);
        }
        info.fill_upper_triangle_with_lower_triangle();
        let step = match info.clone().cholesky() {
            Some(chol) => chol.solve(&score),
            None => {
                let mean_diag = info.diagonal().sum() / q as f64;
                for i in 0..q {
                    info[(i, i)] += 1e-8 * mean_diag.max(1.0);
                }
                match info.cholesky() {
                    Some(chol) => chol.solve(&score),
                    None => break,
                }
            }
        };
        beta += step;
        if beta.amax() > SEPARATION_COEF_BOUND {
            break;
        }
    }

    let separation_flag = !converged || beta.amax() > SEPARATION_COEF_BOUND;
    Ok(LogisticModel {
        coefficients: beta,
        feature_indices: (0..p).collect(),
        converged,
        separation_flag,
    })
}

/// Logistic fit restricted to the named covariate columns.
pub fn fit_logistic_on(
    x_full: &DMatrix<f64>,
    features: &[usize],
    r: &DVector<f64>,
) -> Result<LogisticModel, ModelError> {
    let sub = select_columns(x_full, features)?;
    let mut model = fit_logistic(&sub, r)?;
    model.feature_indices = features.to_vec();
    Ok(model)
}

/// Expit of the linear predictor, one probability per row.
pub fn predict_propensity(
    model: &LogisticModel,
    x: &DMatrix<f64>,
) -> Result<DVector<f64>, ModelError> {
    let sub = select_columns(x, &model.feature_indices)?;
    if model.coefficients.len() != sub.ncols() + 1 {
        return Err(ModelError::ShapeMismatch(format!(
            "{} coefficients for {} features",
            model.coefficients.len(),
            sub.ncols()
        )));
    }
    let design = design_with_intercept(&sub);
    let eta = design * &model.coefficients;
    Ok(DVector::from_iterator(eta.len(), eta.iter().map(|&e| expit(e))))
}

/// Which side of the trial a working model belongs to and how it is fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Identity,
    Linear,
    Logistic,
}

impl ModelFamily {
    fn name(self) -> &'static str {
        match self {
            ModelFamily::Identity => "identity",
            ModelFamily::Linear => "linear",
            ModelFamily::Logistic => "logistic",
        }
    }
}

/// One working-model request: the arm it describes, its family, and the
/// covariate columns it uses.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ModelSpec {
    pub arm: Arm,
    pub family: ModelFamily,
    pub features: Vec<usize>,
}

/// Fits every requested model. Outcome models are fit per arm on subjects
/// with observed outcomes only; propensity models are fit on the arm's full
/// sample with the observation indicator as response.
pub fn assemble_model_set(
    specs: &[ModelSpec],
    data: &TrialData,
) -> Result<WorkingModelSet, ModelError> {
    if specs.is_empty() {
        return Err(ModelError::EmptyModelSet);
    }
    let mut set = WorkingModelSet::default();
    for spec in specs {
        let annotate = |source: ModelError, index: usize| ModelError::Annotated {
            arm: spec.arm,
            family: spec.family.name(),
            index,
            source: Box::new(source),
        };
        match spec.family {
            ModelFamily::Identity => {
                let model = OutcomeModel::Identity(IdentityModel {
                    feature_indices: spec.features.clone(),
                });
                for &j in &spec.features {
                    if j >= data.covariates().ncols() {
                        let index = outcome_index(&set, spec.arm);
                        return Err(annotate(
                            ModelError::BadFeature { index: j, cols: data.covariates().ncols() },
                            index,
                        ));
                    }
                }
                push_outcome(&mut set, spec.arm, model);
            }
            ModelFamily::Linear => {
                let (x, y) = data.observed_arm(spec.arm);
                let index = outcome_index(&set, spec.arm);
                let model =
                    fit_ols_on(&x, &spec.features, &y).map_err(|e| annotate(e, index))?;
                push_outcome(&mut set, spec.arm, OutcomeModel::Linear(model));
            }
            ModelFamily::Logistic => {
                let (x, r) = data.full_arm_with_indicator(spec.arm);
                let index = match spec.arm {
                    Arm::Treated => set.p1_models.len(),
                    Arm::Control => set.p0_models.len(),
                };
                let model =
                    fit_logistic_on(&x, &spec.features, &r).map_err(|e| annotate(e, index))?;
                match spec.arm {
                    Arm::Treated => set.p1_models.push(model),
                    Arm::Control => set.p0_models.push(model),
                }
            }
        }
    }
    Ok(set)
}

fn outcome_index(set: &WorkingModelSet, arm: Arm) -> usize {
    match arm {
        Arm::Treated => set.g_models.len(),
        Arm::Control => set.h_models.len(),
    }
}

fn push_outcome(set: &mut WorkingModelSet, arm: Arm, model: OutcomeModel) {
    match arm {
        Arm::Treated => set.g_models.push(model),
        Arm::Control => set.h_models.push(model),
    }
}
