//! Uncertainty quantification: nonparametric bootstrap standard errors,
//! Wald intervals, and the influence-function plug-in variance for the
//! complete-outcome ELW estimator.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::el_core::kahan_sum;
use crate::estimators::{run_estimator, Arm, EstimatorError, EstimatorSpec, TrialData};
use crate::models::{predict_outcome, ModelError, OutcomeModel};

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("bootstrap needs at least 2 replicates, got {0}")]
    TooFewReplicates(usize),
    #[error("{failures} of {requested} bootstrap replicates failed")]
    TooManyFailures { failures: usize, requested: usize },
    #[error("centered model-value Gram matrix is singular even after ridge repair")]
    SingularD,
    #[error("influence-function variance requires complete outcomes")]
    MissingOutcomes,
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Bootstrap standard error with failure accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    pub se: f64,
    pub replicates_requested: usize,
    pub replicates_used: usize,
    pub failures: usize,
    pub seed: u64,
}

/// 95% Wald interval and test statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct WaldSummary {
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub test_stat: f64,
}

/// 97.5% standard normal quantile, pinned for bit-exact reproducibility.
pub const Z_975: f64 = 1.959964;

/// Wald summary around `estimate` with standard error `se`.
pub fn wald(estimate: f64, se: f64) -> WaldSummary {
    let half = Z_975 * se;
    let test_stat = if se == 0.0 {
        if estimate == 0.0 {
            0.0
        } else {
            f64::INFINITY * estimate.signum()
        }
    } else {
        estimate / se
    };
    WaldSummary { estimate, se, ci_low: estimate - half, ci_high: estimate + half, test_stat }
}

fn resample_indices(data: &TrialData, stratified: bool, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = data.n_total();
    if stratified {
        let treated = data.arm_indices(Arm::Treated);
        let control = data.arm_indices(Arm::Control);
        let mut out = Vec::with_capacity(n);
        for _ in 0..treated.len() {
            out.push(treated[rng.gen_range(0..treated.len())]);
        }
        for _ in 0..control.len() {
            out.push(control[rng.gen_range(0..control.len())]);
        }
        out
    } else {
        (0..n).map(|_| rng.gen_range(0..n)).collect()
    }
}

/// Resamples subjects with replacement, refits all nuisance models per
/// replicate, and reports the sample standard deviation of the replicate
/// estimates. Failed replicates (non-converged solves, degenerate
/// resamples) are dropped and counted; more than half failing aborts.
///
/// Replicate `b` draws from a ChaCha stream keyed by `seed` with stream
/// id `b`, so results are independent of the worker-thread count.
pub fn bootstrap_se(
    data: &TrialData,
    spec: &EstimatorSpec,
    replicates: usize,
    seed: u64,
    stratified: bool,
) -> Result<BootstrapResult, InferenceError> {
    if replicates < 2 {
        return Err(InferenceError::TooFewReplicates(replicates));
    }
    // Chunk the replicate range so nested use (bootstrap inside a parallel
    // Monte Carlo loop) does not drown in tiny tasks.
    let estimates: Vec<Option<f64>> = (0..replicates)
        .into_par_iter()
        .with_min_len(64)
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let indices = resample_indices(data, stratified, &mut rng);
            data.resample(&indices)
                .and_then(|resampled| run_estimator(spec, &resampled))
                .ok()
                .map(|est| est.theta_hat)
        })
        .collect();

    let used: Vec<f64> = estimates.iter().flatten().copied().collect();
    let failures = replicates - used.len();
    if failures > replicates / 2 {
        return Err(InferenceError::TooManyFailures { failures, requested: replicates });
    }
    let mean = kahan_sum(used.iter().copied()) / used.len() as f64;
    let ss = kahan_sum(used.iter().map(|v| (v - mean) * (v - mean)));
    let se = (ss / (used.len() - 1) as f64).sqrt();
    Ok(BootstrapResult {
        se,
        replicates_requested: replicates,
        replicates_used: used.len(),
        failures,
        seed,
    })
}

/// Influence-function plug-in variance components for the complete-outcome
/// ELW estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct IFVariance {
    /// Estimated variance of the point estimate (var of the influence
    /// values divided by N).
    pub variance_hat: f64,
    pub c1: DVector<f64>,
    pub c0: DVector<f64>,
    pub d1: DMatrix<f64>,
    pub d0: DMatrix<f64>,
    pub mu1: f64,
    pub mu0: f64,
    pub delta_hat: f64,
}

impl IFVariance {
    pub fn se(&self) -> f64 {
        self.variance_hat.sqrt()
    }
}

/// Centered model values over the pooled sample, with exactly-constant
/// columns dropped (they calibrate nothing and would make the Gram matrix
/// singular).
struct CenteredBlock {
    values: DMatrix<f64>,
}

fn centered_block(values: &DMatrix<f64>) -> CenteredBlock {
    let n = values.nrows();
    let mut centered = values.clone();
    let mut keep = Vec::new();
    for j in 0..values.ncols() {
        let mean = kahan_sum(values.column(j).iter().copied()) / n as f64;
        let mut variance = 0.0;
        for i in 0..n {
            centered[(i, j)] -= mean;
            variance += centered[(i, j)] * centered[(i, j)];
        }
        if variance / n as f64 > 1e-12 * (1.0 + mean * mean) {
            keep.push(j);
        }
    }
    let mut out = DMatrix::zeros(n, keep.len());
    for (k, &j) in keep.iter().enumerate() {
        out.column_mut(k).copy_from(&centered.column(j));
    }
    CenteredBlock { values: out }
}

struct ArmCorrection {
    /// D^{-1} C, zero-length when the model block is empty.
    dinv_c: DVector<f64>,
    c: DVector<f64>,
    d: DMatrix<f64>,
    centered: DMatrix<f64>,
}

fn arm_correction(
    data: &TrialData,
    arm: Arm,
    model: &OutcomeModel,
    mu: f64,
) -> Result<ArmCorrection, InferenceError> {
    let n = data.n_total();
    let values = predict_outcome(model, data.covariates())?;
    let block = centered_block(&values);
    let r = block.values.ncols();
    if r == 0 {
        return Ok(ArmCorrection {
            dinv_c: DVector::zeros(0),
            c: DVector::zeros(0),
            d: DMatrix::zeros(0, 0),
            centered: block.values,
        });
    }

    let delta = data.delta_hat();
    let arm_share = match arm {
        Arm::Treated => delta,
        Arm::Control => 1.0 - delta,
    };
    let target = matches!(arm, Arm::Treated) as u8;

    let mut c = DVector::<f64>::zeros(r);
    let mut d = DMatrix::<f64>::zeros(r, r);
    for i in 0..n {
        let g = block.values.row(i).transpose();
        d.syger(1.0 / n as f64, &g, &g, 1.0);
        if data.treatment()[i] == target {
            let y = data.outcome(i).expect("complete outcomes checked by caller");
            c.axpy((y - mu) / (arm_share * n as f64), &g, 1.0);
        }
    }
    d.fill_upper_triangle_with_lower_triangle();

    let solve = |mat: &DMatrix<f64>| mat.clone().cholesky().map(|ch| ch.solve(&c));
    let dinv_c = solve(&d)
        .or_else(|| {
            let mean_diag = d.diagonal().sum() / r as f64;
            let mut repaired = d.clone();
            for i in 0..r {
                repaired[(i, i)] += 1e-10 * mean_diag.max(1.0);
            }
            solve(&repaired)
        })
        .ok_or(InferenceError::SingularD)?;
    Ok(ArmCorrection { dinv_c, c, d, centered: block.values })
}

/// Plug-in of the influence-function variance for the complete-outcome
/// estimator: every population expectation is replaced by its pooled-sample
/// mean, arm means by sample means, and the treatment probability by m/N.
pub fn if_variance_nomissing(
    data: &TrialData,
    g: &OutcomeModel,
    h: &OutcomeModel,
) -> Result<IFVariance, InferenceError> {
    if data.has_missing() {
        return Err(InferenceError::MissingOutcomes);
    }
    let n = data.n_total();
    let delta = data.delta_hat();
    let (_, y1) = data.observed_arm(Arm::Treated);
    let (_, y0) = data.observed_arm(Arm::Control);
    let mu1 = kahan_sum(y1.iter().copied()) / y1.len() as f64;
    let mu0 = kahan_sum(y0.iter().copied()) / y0.len() as f64;

    let treated = arm_correction(data, Arm::Treated, g, mu1)?;
    let control = arm_correction(data, Arm::Control, h, mu0)?;

    // Both model corrections carry a minus sign: with correctly specified
    // regressions the influence function must collapse to the efficient
    // one, whose control-arm augmentation is -(W-delta)/(1-delta) times
    // the centered regression (the variance then attains the bound; a
    // plus sign there inflates it far above the bootstrap).
    let mut phi = Vec::with_capacity(n);
    for i in 0..n {
        let w = data.treatment()[i] as f64;
        let y = data.outcome(i).expect("complete outcomes checked above");
        let mut value = w / delta * (y - mu1) - (1.0 - w) / (1.0 - delta) * (y - mu0);
        if treated.centered.ncols() > 0 {
            let gvec = treated.centered.row(i).transpose();
            value -= (w - delta) / delta * treated.dinv_c.dot(&gvec);
        }
        if control.centered.ncols() > 0 {
            let hvec = control.centered.row(i).transpose();
            value -= (w - delta) / (1.0 - delta) * control.dinv_c.dot(&hvec);
        }
        phi.push(value);
    }

    let mean = kahan_sum(phi.iter().copied()) / n as f64;
    let var_phi = kahan_sum(phi.iter().map(|v| (v - mean) * (v - mean))) / (n - 1) as f64;
    Ok(IFVariance {
        variance_hat: var_phi / n as f64,
        c1: treated.c,
        c0: control.c,
        d1: treated.d,
        d0: control.d,
        mu1,
        mu0,
        delta_hat: delta,
    })
}
