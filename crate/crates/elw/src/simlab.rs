//! Simulation designs with the published parameters, missingness
//! injection, and a seeded Monte Carlo driver that reports the evaluation
//! metrics used in the tables.
//!
//! Draw order inside every generated dataset is covariates, treatment,
//! observation indicator, outcome — the observation indicator is drawn
//! before the outcome exists, so missingness cannot depend on it.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::el_core::kahan_sum;
use crate::estimators::{run_estimator, EstimatorSpec, TrialData};
use crate::inference::{bootstrap_se, Z_975};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario config: {0}")]
    BadConfig(String),
    #[error("covariance matrix is not positive semidefinite")]
    BadMoments,
    #[error("all {reps} replicates failed for estimator '{estimator}'")]
    AllReplicatesFailed { estimator: String, reps: usize },
    #[error("generated dataset was invalid: {0}")]
    Degenerate(String),
}

/// Simulation designs. The coefficient vectors and missingness models are
/// fixed to the published values; arm assignments are oriented so each
/// design's true effect is +10.
#[derive(Debug, Clone, PartialEq)]
pub enum Scenario {
    Sim2Linear,
    Sim2Nonlinear,
    Sim3 { alpha_treated: Vec<f64>, alpha_control: Vec<f64> },
    Sim4,
    Custom(CustomScenario),
}

/// Printed missingness coefficients for the lowest missing-proportion
/// column of the third design (about 14% missing overall).
pub fn sim3_default_alphas() -> (Vec<f64>, Vec<f64>) {
    (
        vec![-5.147, -0.3, 0.8, 0.5, 0.3],
        vec![-3.247, 0.2, -0.3, 0.4, 0.5],
    )
}

impl Scenario {
    pub fn sim3_printed() -> Scenario {
        let (alpha_treated, alpha_control) = sim3_default_alphas();
        Scenario::Sim3 { alpha_treated, alpha_control }
    }

    /// Number of covariate columns the generated data carries.
    pub fn covariate_count(&self) -> usize {
        match self {
            Scenario::Sim2Linear | Scenario::Sim2Nonlinear => 3,
            Scenario::Sim3 { .. } => 4,
            Scenario::Sim4 => 7,
            Scenario::Custom(c) => c.gaussian_mean.len() + c.bernoulli_probs.len(),
        }
    }
}

/// Config-driven generator: a Gaussian block, an independent Bernoulli
/// block, linear arm outcomes, and optional logistic missingness (the
/// coefficients give the log-odds of a missing outcome).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomScenario {
    pub gaussian_mean: Vec<f64>,
    /// Row-major covariance of the Gaussian block.
    pub gaussian_cov: Vec<Vec<f64>>,
    #[serde(default)]
    pub bernoulli_probs: Vec<f64>,
    /// Intercept-first outcome coefficients over all covariate columns.
    pub beta_treated: Vec<f64>,
    pub beta_control: Vec<f64>,
    pub error_sd_treated: f64,
    pub error_sd_control: f64,
    #[serde(default)]
    pub missing_logit_treated: Option<Vec<f64>>,
    #[serde(default)]
    pub missing_logit_control: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub n: usize,
    pub delta: f64,
    pub reps: usize,
    /// Bootstrap replicates per Monte Carlo dataset; 0 skips the bootstrap
    /// metrics.
    pub bootstrap_b: usize,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n < 20 {
            return Err(SimError::BadConfig(format!("n must be >= 20, got {}", self.n)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(SimError::BadConfig(format!("delta must be in (0,1), got {}", self.delta)));
        }
        if self.reps < 1 {
            return Err(SimError::BadConfig("reps must be >= 1".into()));
        }
        Ok(())
    }

    /// True treatment effect of the configured design.
    pub fn true_theta(&self) -> f64 {
        match &self.scenario {
            Scenario::Sim2Linear | Scenario::Sim2Nonlinear | Scenario::Sim3 { .. } | Scenario::Sim4 => 10.0,
            Scenario::Custom(c) => custom_true_theta(c),
        }
    }
}

fn custom_true_theta(c: &CustomScenario) -> f64 {
    let mut theta = c.beta_treated[0] - c.beta_control[0];
    let means = c.gaussian_mean.iter().chain(c.bernoulli_probs.iter());
    for (j, mu) in means.enumerate() {
        theta += (c.beta_treated[j + 1] - c.beta_control[j + 1]) * mu;
    }
    theta
}

/// Per-table metrics for one estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub estimator: String,
    pub bias: f64,
    pub ave_boot_se: f64,
    pub cov_prob_boot: f64,
    pub mse: f64,
    pub replicates_used: usize,
    pub failures: usize,
}

fn expit(eta: f64) -> f64 {
    1.0 / (1.0 + (-eta).exp())
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

struct Generated {
    w: Vec<u8>,
    r: Vec<u8>,
    y: Vec<Option<f64>>,
    x: DMatrix<f64>,
}

impl Generated {
    fn with_capacity(n: usize, cols: usize) -> Self {
        Self {
            w: Vec::with_capacity(n),
            r: Vec::with_capacity(n),
            y: Vec::with_capacity(n),
            x: DMatrix::zeros(n, cols),
        }
    }

    fn into_data(self) -> Result<TrialData, SimError> {
        TrialData::new(self.w, self.r, self.y, self.x)
            .map_err(|e| SimError::Degenerate(e.to_string()))
    }
}

fn linear_outcome(beta: &[f64], features: &[f64]) -> f64 {
    beta[0] + beta[1..].iter().zip(features).map(|(b, v)| b * v).sum::<f64>()
}

/// Generator for the three-covariate design: trivariate normal covariates
/// with an exact unit-lower-triangular Cholesky factor, linear or
/// sin-transformed outcome in the first covariate.
pub fn gen_sim2(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Result<TrialData, SimError> {
    let linear = match cfg.scenario {
        Scenario::Sim2Linear => true,
        Scenario::Sim2Nonlinear => false,
        _ => return Err(SimError::BadConfig("gen_sim2 requires a sim2 scenario".into())),
    };
    // Covariance [[1,1,1],[1,2,2],[1,2,3]] factors as L L' with
    // L = [[1,0,0],[1,1,0],[1,1,1]].
    let mu = [1.0, 2.0, 3.0];
    // Treated/control coefficient and noise-sd pairs oriented so the arm
    // difference is +10.
    let (beta_t, sd_t, beta_c, sd_c): (&[f64], f64, &[f64], f64) = if linear {
        (&[3.0, 10.0, 13.0, 10.0], 4.0, &[5.0, 7.0, 10.0, 9.0], 6.0)
    } else {
        (&[9.0, 19.593, 13.0, 10.0], 6.0, &[12.0, 11.756, 10.0, 9.0], 4.0)
    };

    let mut out = Generated::with_capacity(cfg.n, 3);
    for i in 0..cfg.n {
        let z1 = normal(rng);
        let z2 = normal(rng);
        let z3 = normal(rng);
        let x1 = mu[0] + z1;
        let x2 = mu[1] + z1 + z2;
        let x3 = mu[2] + z1 + z2 + z3;
        out.x[(i, 0)] = x1;
        out.x[(i, 1)] = x2;
        out.x[(i, 2)] = x3;

        let w = rng.gen_bool(cfg.delta);
        let eps = normal(rng);
        let first = if linear { x1 } else { x1.sin() };
        let y = if w {
            linear_outcome(beta_t, &[first, x2, x3]) + sd_t * eps
        } else {
            linear_outcome(beta_c, &[first, x2, x3]) + sd_c * eps
        };
        out.w.push(w as u8);
        out.r.push(1);
        out.y.push(Some(y));
    }
    out.into_data()
}

/// Generator for the missing-outcome design: four independent covariates,
/// linear outcomes, and arm-specific logistic missingness (the printed
/// coefficients give the log-odds that the outcome is missing).
pub fn gen_sim3(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Result<TrialData, SimError> {
    let (alpha_t, alpha_c) = match &cfg.scenario {
        Scenario::Sim3 { alpha_treated, alpha_control } => (alpha_treated, alpha_control),
        _ => return Err(SimError::BadConfig("gen_sim3 requires the sim3 scenario".into())),
    };
    if alpha_t.len() != 5 || alpha_c.len() != 5 {
        return Err(SimError::BadConfig("sim3 missingness vectors must have length 5".into()));
    }
    let beta_t = [10.0, 8.0, 11.0, 10.0, 4.0];
    let beta_c = [5.0, 7.0, 10.0, 9.0, 6.0];
    let (sd_t, sd_c) = (4.0, 6.0);
    let sqrt3 = 3.0f64.sqrt();

    let mut out = Generated::with_capacity(cfg.n, 4);
    for i in 0..cfg.n {
        let x = [
            1.0 + sqrt3 * normal(rng),
            2.0 + sqrt3 * normal(rng),
            3.0 + normal(rng),
            rng.gen_bool(0.5) as u8 as f64,
        ];
        for (j, v) in x.iter().enumerate() {
            out.x[(i, j)] = *v;
        }
        let w = rng.gen_bool(cfg.delta);
        let alpha = if w { alpha_t } else { alpha_c };
        let miss_logit = linear_outcome(alpha, &x);
        let missing = rng.gen_bool(expit(miss_logit));
        let eps = normal(rng);
        out.w.push(w as u8);
        out.r.push(!missing as u8);
        out.y.push(if missing {
            None
        } else if w {
            Some(linear_outcome(&beta_t, &x) + sd_t * eps)
        } else {
            Some(linear_outcome(&beta_c, &x) + sd_c * eps)
        });
    }
    out.into_data()
}

/// Generator for the multiply robust design: four covariates, three
/// auxiliary variables appended as extra columns (S1, S2, S3), correlated
/// outcome noise, and missingness driven by the binary auxiliary.
pub fn gen_sim4(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Result<TrialData, SimError> {
    if !matches!(cfg.scenario, Scenario::Sim4) {
        return Err(SimError::BadConfig("gen_sim4 requires the sim4 scenario".into()));
    }
    let beta_t = [10.0, 8.0, 12.0, 10.0, 4.0];
    let beta_c = [6.0, 7.0, 10.0, 9.0, 6.0];
    // Noise covariance: diag(2,2,1,1) with cov(eps_y, eps_1) = 0.5.
    let sqrt2 = 2.0f64.sqrt();
    let l21 = 0.5 / sqrt2;
    let l22 = (2.0 - l21 * l21).sqrt();

    let mut out = Generated::with_capacity(cfg.n, 7);
    for i in 0..cfg.n {
        let x1 = 5.0 + normal(rng);
        let x2 = rng.gen_bool(0.5) as u8 as f64;
        let x3 = normal(rng);
        let x4 = normal(rng);
        let z_y = normal(rng);
        let z1 = normal(rng);
        let eps_y = sqrt2 * z_y;
        let eps_1 = l21 * z_y + l22 * z1;
        let eps_2 = normal(rng);
        let eps_3 = normal(rng);

        let s1 = 1.0 + x1 - x2 + eps_1;
        let s2 = (s1 + 0.3 * eps_2 > 5.8) as u8 as f64;
        let s3 = ((s1 / 9.0) * (s1 / 9.0)).exp() + eps_3;
        for (j, v) in [x1, x2, x3, x4, s1, s2, s3].iter().enumerate() {
            out.x[(i, j)] = *v;
        }

        let w = rng.gen_bool(cfg.delta);
        let observed = rng.gen_bool(expit(3.5 - 5.0 * s2));
        out.w.push(w as u8);
        out.r.push(observed as u8);
        out.y.push(if !observed {
            None
        } else if w {
            Some(linear_outcome(&beta_t, &[x1, x2, x3, x4]) + eps_y)
        } else {
            Some(linear_outcome(&beta_c, &[x1, x2, x3, x4]) + eps_y)
        });
    }
    out.into_data()
}

/// Generator for user-configured moments: Gaussian block via Cholesky,
/// independent Bernoulli block, linear outcomes, optional missingness.
pub fn gen_custom(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Result<TrialData, SimError> {
    let c = match &cfg.scenario {
        Scenario::Custom(c) => c,
        _ => return Err(SimError::BadConfig("gen_custom requires a custom scenario".into())),
    };
    let g = c.gaussian_mean.len();
    let b = c.bernoulli_probs.len();
    let p = g + b;
    if c.gaussian_cov.len() != g || c.gaussian_cov.iter().any(|row| row.len() != g) {
        return Err(SimError::BadConfig("gaussian_cov must be square and match gaussian_mean".into()));
    }
    if c.beta_treated.len() != p + 1 || c.beta_control.len() != p + 1 {
        return Err(SimError::BadConfig(format!(
            "outcome coefficient vectors must have length {} (intercept first)",
            p + 1
        )));
    }
    for alpha in [&c.missing_logit_treated, &c.missing_logit_control].into_iter().flatten() {
        if alpha.len() != p + 1 {
            return Err(SimError::BadConfig(format!(
                "missingness coefficient vectors must have length {} (intercept first)",
                p + 1
            )));
        }
    }
    if !(c.error_sd_treated >= 0.0 && c.error_sd_control >= 0.0) {
        return Err(SimError::BadConfig("error SDs must be nonnegative".into()));
    }

    let chol = if g > 0 {
        let mut cov = DMatrix::<f64>::zeros(g, g);
        for i in 0..g {
            for j in 0..g {
                cov[(i, j)] = c.gaussian_cov[i][j];
            }
        }
        // An exactly-degenerate covariance (zero rows) is allowed: fall
        // back to a tiny ridge only to factor, which perturbs draws by
        // about 1e-6 of the scale.
        match cov.clone().cholesky() {
            Some(ch) => Some(ch),
            None => {
                let scale = (cov.diagonal().amax()).max(1.0);
                for i in 0..g {
                    cov[(i, i)] += 1e-12 * scale;
                }
                Some(cov.cholesky().ok_or(SimError::BadMoments)?)
            }
        }
    } else {
        None
    };

    let mut out = Generated::with_capacity(cfg.n, p);
    let mut features = vec![0.0; p];
    for i in 0..cfg.n {
        if let Some(ch) = &chol {
            let z = DVector::from_iterator(g, (0..g).map(|_| normal(rng)));
            let gvals = ch.l() * z;
            for j in 0..g {
                features[j] = c.gaussian_mean[j] + gvals[j];
            }
        }
        for (k, prob) in c.bernoulli_probs.iter().enumerate() {
            features[g + k] = rng.gen_bool(*prob) as u8 as f64;
        }
        for (j, v) in features.iter().enumerate() {
            out.x[(i, j)] = *v;
        }

        let w = rng.gen_bool(cfg.delta);
        let alpha = if w { &c.missing_logit_treated } else { &c.missing_logit_control };
        let missing = match alpha {
            Some(a) => rng.gen_bool(expit(linear_outcome(a, &features))),
            None => false,
        };
        let eps = normal(rng);
        out.w.push(w as u8);
        out.r.push(!missing as u8);
        out.y.push(if missing {
            None
        } else if w {
            Some(linear_outcome(&c.beta_treated, &features) + c.error_sd_treated * eps)
        } else {
            Some(linear_outcome(&c.beta_control, &features) + c.error_sd_control * eps)
        });
    }
    out.into_data()
}

/// Dispatches to the scenario's generator.
pub fn generate(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Result<TrialData, SimError> {
    match &cfg.scenario {
        Scenario::Sim2Linear | Scenario::Sim2Nonlinear => gen_sim2(cfg, rng),
        Scenario::Sim3 { .. } => gen_sim3(cfg, rng),
        Scenario::Sim4 => gen_sim4(cfg, rng),
        Scenario::Custom(_) => gen_custom(cfg, rng),
    }
}

fn mix_seed(seed: u64, replicate: u64, spec_index: u64) -> u64 {
    // splitmix64 over the packed identifiers.
    let mut z = seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(replicate.wrapping_mul(0xbf58_476d_1ce4_e5b9))
        .wrapping_add(spec_index.wrapping_mul(0x94d0_49bb_1331_11eb))
        .wrapping_add(0x2545_f491_4f6c_dd1d);
    z ^= z >> 30;
    z = z.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

struct ReplicateOutcome {
    theta: Option<f64>,
    boot_se: Option<f64>,
}

/// Runs the configured number of Monte Carlo replicates and aggregates the
/// table metrics per estimator. Replicates execute in parallel; each one
/// derives its random streams from (seed, replicate index) and results are
/// reduced in replicate order, so the output is independent of the worker
/// count. Coverage follows the tables' convention: the Wald interval uses
/// the average bootstrap standard error.
pub fn run_monte_carlo(
    cfg: &ScenarioConfig,
    specs: &[EstimatorSpec],
) -> Result<Vec<MetricsRow>, SimError> {
    cfg.validate()?;
    if specs.is_empty() {
        return Err(SimError::BadConfig("need at least one estimator spec".into()));
    }
    let theta_true = cfg.true_theta();

    let outcomes: Vec<Vec<ReplicateOutcome>> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(rep as u64);
            let data = match generate(cfg, &mut rng) {
                Ok(d) => d,
                Err(_) => {
                    return specs
                        .iter()
                        .map(|_| ReplicateOutcome { theta: None, boot_se: None })
                        .collect()
                }
            };
            specs
                .iter()
                .enumerate()
                .map(|(s, spec)| match run_estimator(spec, &data) {
                    Ok(est) => {
                        let boot_se = if cfg.bootstrap_b > 0 {
                            let boot_seed = mix_seed(cfg.seed, rep as u64, s as u64);
                            match bootstrap_se(&data, spec, cfg.bootstrap_b, boot_seed, false) {
                                Ok(b) => Some(b.se),
                                Err(_) => None,
                            }
                        } else {
                            None
                        };
                        if cfg.bootstrap_b > 0 && boot_se.is_none() {
                            ReplicateOutcome { theta: None, boot_se: None }
                        } else {
                            ReplicateOutcome { theta: Some(est.theta_hat), boot_se }
                        }
                    }
                    Err(_) => ReplicateOutcome { theta: None, boot_se: None },
                })
                .collect()
        })
        .collect();

    let mut rows = Vec::with_capacity(specs.len());
    for (s, spec) in specs.iter().enumerate() {
        let thetas: Vec<f64> = outcomes.iter().filter_map(|rep| rep[s].theta).collect();
        let used = thetas.len();
        if used == 0 {
            return Err(SimError::AllReplicatesFailed { estimator: spec.label(), reps: cfg.reps });
        }
        let bias = kahan_sum(thetas.iter().map(|t| t - theta_true)) / used as f64;
        let mse = kahan_sum(thetas.iter().map(|t| (t - theta_true) * (t - theta_true)))
            / used as f64;
        let (ave_boot_se, cov_prob_boot) = if cfg.bootstrap_b > 0 {
            let ses: Vec<f64> = outcomes.iter().filter_map(|rep| rep[s].boot_se).collect();
            let ave = kahan_sum(ses.iter().copied()) / ses.len() as f64;
            let covered = thetas.iter().filter(|t| (**t - theta_true).abs() <= Z_975 * ave).count();
            (ave, covered as f64 / used as f64)
        } else {
            (f64::NAN, f64::NAN)
        };
        rows.push(MetricsRow {
            estimator: spec.label(),
            bias,
            ave_boot_se,
            cov_prob_boot,
            mse,
            replicates_used: used,
            failures: cfg.reps - used,
        });
    }
    Ok(rows)
}
