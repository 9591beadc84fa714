//! Acceptance suite. Each test is one numbered criterion; the test name
//! and the harness verdict form the pass/fail line, and every test prints
//! its measured values (visible with `--nocapture`).

use nalgebra::{dmatrix, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use elw::el_core::{augment, solve_weights, ConstraintMatrix, SolverOptions};
use elw::estimators::{
    estimate_elw, estimate_elw_missing, estimate_qz, estimate_unadjusted, run_estimator, Arm,
    EstimatorSpec, Method, TrialData,
};
use elw::inference::{bootstrap_se, if_variance_nomissing};
use elw::models::{assemble_model_set, IdentityModel, ModelFamily, ModelSpec, OutcomeModel, WorkingModelSet};
use elw::simlab::{generate, run_monte_carlo, Scenario, ScenarioConfig};

fn model(arm: Arm, family: ModelFamily, features: Vec<usize>) -> ModelSpec {
    ModelSpec { arm, family, features }
}

fn spec(method: Method, models: Vec<ModelSpec>, label: &str) -> EstimatorSpec {
    let mut s = EstimatorSpec::new(method);
    s.models = models;
    s.label = Some(label.to_string());
    s
}

/// Primal-side oracle: maximize sum(log p) over {p > 0, sum p = 1,
/// U'p = 0} by Newton iteration on a null-space parametrization of the
/// equality constraints, started from a known interior feasible point.
/// Shares nothing with the production solver's Lagrange-dual path.
fn primal_oracle(u: &DMatrix<f64>, start: &DVector<f64>) -> DVector<f64> {
    let n = u.nrows();
    let r = u.ncols();
    // A p = b rows: the simplex constraint then each constraint column.
    let mut a = DMatrix::<f64>::zeros(1 + r, n);
    for j in 0..n {
        a[(0, j)] = 1.0;
    }
    for k in 0..r {
        for j in 0..n {
            a[(1 + k, j)] = u[(j, k)];
        }
    }
    let svd = a.clone().svd(true, true);
    let v_t = svd.v_t.as_ref().expect("svd requested v_t");
    let tol = svd.singular_values.max() * (n as f64) * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|s| **s > tol).count();
    let null_dim = n - rank;
    if null_dim == 0 {
        return start.clone();
    }
    // Rows of v_t beyond the rank span the null space of A.
    let mut z = DMatrix::<f64>::zeros(n, null_dim);
    for k in 0..null_dim {
        for j in 0..n {
            z[(j, k)] = v_t[(rank + k, j)];
        }
    }

    let mut p = start.clone();
    for _ in 0..200 {
        let inv_p = DVector::from_iterator(n, p.iter().map(|v| 1.0 / v));
        let grad = z.transpose() * &inv_p;
        if grad.amax() < 1e-12 {
            break;
        }
        let mut hess = DMatrix::<f64>::zeros(null_dim, null_dim);
        for j in 0..n {
            let zrow = z.row(j).transpose();
            let w = 1.0 / (p[j] * p[j]);
            hess.syger(w, &zrow, &zrow, 1.0);
        }
        hess.fill_upper_triangle_with_lower_triangle();
        let step_v = hess
            .cholesky()
            .expect("oracle hessian is positive definite")
            .solve(&grad);
        let direction = &z * step_v;
        // Backtrack to stay strictly positive and ascend.
        let objective = |q: &DVector<f64>| -> Option<f64> {
            if q.iter().any(|v| *v <= 0.0) {
                None
            } else {
                Some(q.iter().map(|v| v.ln()).sum())
            }
        };
        let current = objective(&p).unwrap();
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let candidate = &p + &direction * t;
            if let Some(value) = objective(&candidate) {
                if value >= current {
                    p = candidate;
                    accepted = true;
                    break;
                }
            }
            t /= 2.0;
        }
        if !accepted {
            break;
        }
    }
    p
}

#[test]
fn criterion_01_dual_solver_matches_primal_oracle_on_200_instances() {
    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let opts = SolverOptions::default();
    let mut checked = 0;
    let mut worst = 0.0f64;
    while checked < 200 {
        let n = rng.gen_range(3..=6usize);
        let r = rng.gen_range(1..=2usize).min(n - 2);
        // Interior point first, then rows centered so the hull holds at it.
        let w_raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
        let total: f64 = w_raw.iter().sum();
        let interior = DVector::from_iterator(n, w_raw.iter().map(|v| v / total));
        let mut u = DMatrix::<f64>::zeros(n, r);
        for j in 0..n {
            for k in 0..r {
                u[(j, k)] = rng.gen_range(-1.0..1.0);
            }
        }
        for k in 0..r {
            let pinned: f64 = (0..n).map(|j| interior[j] * u[(j, k)]).sum();
            for j in 0..n {
                u[(j, k)] -= pinned;
            }
        }

        let solved = solve_weights(&ConstraintMatrix::new(u.clone()).unwrap(), &opts).unwrap();
        assert!(!solved.augmented, "hull holds by construction");
        let oracle = primal_oracle(&u, &interior);
        for j in 0..n {
            let gap = (solved.weights[j] - oracle[j]).abs();
            worst = worst.max(gap);
            assert!(
                gap <= 1e-5,
                "instance {checked}: weight {j} differs from oracle by {gap}"
            );
        }
        checked += 1;
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 5.0, "oracle comparison took {elapsed:.2} s");
    println!("criterion 01 PASS: 200 instances, worst weight gap {worst:.2e}, {elapsed:.2} s");
}

#[test]
fn criterion_02_exact_scalar_case() {
    let u = ConstraintMatrix::new(dmatrix![-1.0; 0.0; 2.0]).unwrap();
    let sol = solve_weights(&u, &SolverOptions::default()).unwrap();
    assert!((sol.lambda[0] - 0.25).abs() <= 1e-10, "lambda = {}", sol.lambda[0]);
    let expected = [4.0 / 9.0, 1.0 / 3.0, 2.0 / 9.0];
    for (w, e) in sol.weights.iter().zip(expected) {
        assert!((w - e).abs() <= 1e-10, "weight {w} vs {e}");
    }
    println!(
        "criterion 02 PASS: lambda residual {:.2e}, worst weight residual {:.2e}",
        (sol.lambda[0] - 0.25).abs(),
        sol.weights
            .iter()
            .zip(expected)
            .map(|(w, e)| (w - e).abs())
            .fold(0.0f64, f64::max)
    );
}

#[test]
fn criterion_03_augmentation_preserves_mean_on_1000_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(2..=12usize);
        let r = rng.gen_range(1..=4usize);
        let scale = 10f64.powi(rng.gen_range(-2..3));
        let mut m = DMatrix::<f64>::zeros(n, r);
        for j in 0..n {
            for k in 0..r {
                m[(j, k)] = scale * rng.gen_range(-1.0..1.0);
            }
        }
        let cm = ConstraintMatrix::new(m.clone()).unwrap();
        let s = rng.gen_range(0.5..4.0);
        let augmented = match augment(&cm, s) {
            Ok(a) => a,
            // Zero mean direction or singular covariance: not a mean
            // preservation case.
            Err(_) => continue,
        };
        let before = m.row_mean();
        let after = augmented.values().row_mean();
        for k in 0..r {
            let denom = before[k].abs().max(scale * 1e-3);
            let rel = (before[k] - after[k]).abs() / denom;
            worst = worst.max(rel);
            assert!(rel <= 1e-12, "relative mean drift {rel}");
        }
    }
    println!("criterion 03 PASS: worst relative mean drift {worst:.2e}");
}

fn sim2_identity_specs() -> Vec<EstimatorSpec> {
    vec![
        EstimatorSpec::new(Method::Unadjusted),
        spec(
            Method::Elw,
            vec![
                model(Arm::Treated, ModelFamily::Identity, vec![0, 1, 2]),
                model(Arm::Control, ModelFamily::Identity, vec![0, 1, 2]),
            ],
            "ELW-Identity",
        ),
    ]
}

fn check_sim2_linear(reps: usize, bootstrap_b: usize, bias_tol: f64, mse_tol: f64) {
    let cfg = ScenarioConfig {
        scenario: Scenario::Sim2Linear,
        n: 400,
        delta: 0.5,
        reps,
        bootstrap_b,
        seed: 20260810,
    };
    let rows = run_monte_carlo(&cfg, &sim2_identity_specs()).unwrap();
    let unadj = &rows[0];
    let elw = &rows[1];
    println!(
        "criterion 04 measured: bias {:+.4} (target 0.028 +/- {bias_tol}), mse {:.4} \
         (target 0.400 +/- {:.0}%), coverage {:.4}, SE ratio {:.2}",
        elw.bias,
        elw.mse,
        mse_tol * 100.0,
        elw.cov_prob_boot,
        unadj.ave_boot_se / elw.ave_boot_se
    );
    assert!((elw.bias - 0.028).abs() <= bias_tol, "bias {:+.4}", elw.bias);
    assert!((elw.mse - 0.400).abs() <= mse_tol * 0.400, "mse {:.4}", elw.mse);
    assert!(
        elw.cov_prob_boot >= 0.93 && elw.cov_prob_boot <= 0.97,
        "coverage {:.4}",
        elw.cov_prob_boot
    );
    assert!(
        unadj.ave_boot_se / elw.ave_boot_se >= 4.0,
        "SE ratio {:.2}",
        unadj.ave_boot_se / elw.ave_boot_se
    );
}

#[test]
fn criterion_04_sim2_linear_desk_scale() {
    check_sim2_linear(200, 200, 0.1, 0.35);
    println!("criterion 04 PASS (desk scale: 200 reps, B=200)");
}

#[test]
#[ignore = "full published scale (1000 reps, B=500); several minutes — run with --ignored"]
fn criterion_04_sim2_linear_full_scale() {
    check_sim2_linear(1000, 500, 0.06, 0.20);
    println!("criterion 04 PASS (full scale: 1000 reps, B=500)");
}

#[test]
fn criterion_05_sim2_nonlinear_mse() {
    let cfg = ScenarioConfig {
        scenario: Scenario::Sim2Nonlinear,
        n: 400,
        delta: 0.5,
        reps: 1000,
        bootstrap_b: 0,
        seed: 20260810,
    };
    let rows = run_monte_carlo(&cfg, &sim2_identity_specs()).unwrap();
    let unadj = &rows[0];
    let elw = &rows[1];
    println!(
        "criterion 05 measured: elw mse {:.4} (target 0.856 +/- 25%), unadjusted mse {:.3}, \
         improvement {:.1}x",
        elw.mse,
        unadj.mse,
        unadj.mse / elw.mse
    );
    assert!((elw.mse - 0.856).abs() <= 0.25 * 0.856, "elw mse {:.4}", elw.mse);
    assert!(unadj.mse / elw.mse >= 10.0, "improvement {:.1}x", unadj.mse / elw.mse);
    println!("criterion 05 PASS");
}

fn sim3_panel(method: Method, label: &str) -> EstimatorSpec {
    spec(
        method,
        vec![
            model(Arm::Treated, ModelFamily::Logistic, vec![0, 1, 2, 3]),
            model(Arm::Control, ModelFamily::Logistic, vec![0, 1, 2, 3]),
            model(Arm::Treated, ModelFamily::Linear, vec![0, 1, 2, 3]),
            model(Arm::Control, ModelFamily::Linear, vec![0, 1, 2, 3]),
        ],
        label,
    )
}

#[test]
fn criterion_06_sim3_printed_alpha_mse_and_ordering() {
    let cfg = ScenarioConfig {
        scenario: Scenario::sim3_printed(),
        n: 400,
        delta: 0.5,
        reps: 500,
        bootstrap_b: 0,
        seed: 20260810,
    };
    let rows = run_monte_carlo(
        &cfg,
        &[sim3_panel(Method::ElwMis, "elw_mis-Linear"), sim3_panel(Method::Qz, "qz-Linear")],
    )
    .unwrap();
    let elw = &rows[0];
    let qz = &rows[1];
    println!(
        "criterion 06 measured: elw_mis mse {:.4} (target 0.368 +/- 25%), qz mse {:.4} \
         (target 4.714 +/- 25%), ordering {:.1}x",
        elw.mse,
        qz.mse,
        qz.mse / elw.mse
    );
    assert!(
        qz.mse / elw.mse >= 5.0,
        "elw < qz ordering margin {:.1}x below 5x",
        qz.mse / elw.mse
    );
    assert!((elw.mse - 0.368).abs() <= 0.25 * 0.368, "elw_mis mse {:.4}", elw.mse);
    // Known red: under the printed covariate moments the own-arm-target
    // comparator's asymptotic variance is about 6.3 at N=400 (two
    // independent implementations agree), so the published 4.714 band
    // cannot be met by a faithful generator.
    assert!((qz.mse - 4.714).abs() <= 0.25 * 4.714, "qz mse {:.4}", qz.mse);
    println!("criterion 06 PASS");
}

#[test]
fn criterion_07_double_robustness_one_correct_model_per_arm() {
    let cfg = ScenarioConfig {
        scenario: Scenario::sim3_printed(),
        n: 400,
        delta: 0.5,
        reps: 500,
        bootstrap_b: 0,
        seed: 20260810,
    };
    // Exactly one correct nuisance model per arm: correct propensity with
    // a wrong regression, then the reverse.
    let pi_correct_g_wrong = spec(
        Method::ElwMis,
        vec![
            model(Arm::Treated, ModelFamily::Logistic, vec![0, 1, 2, 3]),
            model(Arm::Control, ModelFamily::Logistic, vec![0, 1, 2, 3]),
            model(Arm::Treated, ModelFamily::Linear, vec![2]),
            model(Arm::Control, ModelFamily::Linear, vec![2]),
        ],
        "pi-correct/g-wrong",
    );
    let pi_wrong_g_correct = spec(
        Method::ElwMis,
        vec![
            model(Arm::Treated, ModelFamily::Logistic, vec![2]),
            model(Arm::Control, ModelFamily::Logistic, vec![2]),
            model(Arm::Treated, ModelFamily::Linear, vec![0, 1, 2, 3]),
            model(Arm::Control, ModelFamily::Linear, vec![0, 1, 2, 3]),
        ],
        "pi-wrong/g-correct",
    );
    let rows = run_monte_carlo(&cfg, &[pi_correct_g_wrong, pi_wrong_g_correct]).unwrap();
    for row in &rows {
        let sd = (row.mse - row.bias * row.bias).max(0.0).sqrt();
        let mc_se = sd / (row.replicates_used as f64).sqrt();
        println!(
            "criterion 07 measured: {} bias {:+.4}, mc se {:.4}, |bias|/mcse {:.2}",
            row.estimator,
            row.bias,
            mc_se,
            row.bias.abs() / mc_se
        );
        assert!(
            row.bias.abs() <= 3.0 * mc_se,
            "{}: bias {:+.4} exceeds 3 x {:.4}",
            row.estimator,
            row.bias,
            mc_se
        );
    }
    println!("criterion 07 PASS");
}

fn sim4_bits(bits: &str, method: Method, label: &str) -> EstimatorSpec {
    let flags: Vec<bool> = bits.chars().map(|c| c == '1').collect();
    assert_eq!(flags.len(), 8);
    let mut models = Vec::new();
    for (arm, f) in [(Arm::Treated, &flags[0..4]), (Arm::Control, &flags[4..8])] {
        if f[0] {
            models.push(model(arm, ModelFamily::Logistic, vec![5]));
        }
        if f[1] {
            models.push(model(arm, ModelFamily::Logistic, vec![0, 1, 2, 3, 4]));
        }
        if f[2] {
            models.push(model(arm, ModelFamily::Linear, vec![0, 1, 2, 3, 4]));
        }
        if f[3] {
            models.push(model(arm, ModelFamily::Linear, vec![4, 5, 6]));
        }
    }
    spec(method, models, label)
}

#[test]
fn criterion_08_sim4_multiple_robustness_panel() {
    let cfg = ScenarioConfig {
        scenario: Scenario::Sim4,
        n: 400,
        delta: 0.5,
        reps: 500,
        bootstrap_b: 0,
        seed: 20260810,
    };
    let rows = run_monte_carlo(
        &cfg,
        &[
            sim4_bits("10101010", Method::ElwMr, "ELW-10101010"),
            sim4_bits("10101010", Method::Hw, "HW-10101010"),
            sim4_bits("01010101", Method::ElwMr, "ELW-01010101"),
            sim4_bits("10111011", Method::ElwMr, "ELW-10111011"),
            sim4_bits("11101110", Method::ElwMr, "ELW-11101110"),
        ],
    )
    .unwrap();
    let all_correct = &rows[0];
    let hw = &rows[1];
    let all_wrong = &rows[2];
    let near_a = &rows[3];
    let near_b = &rows[4];
    println!(
        "criterion 08 measured: all-correct mse {:.4} (target 0.087 +/- 50%), hw mse {:.4}, \
         all-wrong mse {:.3} bias {:+.4}, near-correct mses {:.4}/{:.4}",
        all_correct.mse, hw.mse, all_wrong.mse, all_wrong.bias, near_a.mse, near_b.mse
    );
    assert!(
        (all_correct.mse - 0.087).abs() <= 0.5 * 0.087,
        "all-correct mse {:.4}",
        all_correct.mse
    );
    assert!(
        hw.mse / all_correct.mse >= 5.0,
        "hw comparator margin {:.1}x below 5x",
        hw.mse / all_correct.mse
    );
    assert!(all_wrong.mse > 3.0, "all-wrong mse {:.3}", all_wrong.mse);
    assert!(
        all_wrong.bias.abs() > all_correct.bias.abs(),
        "all-wrong bias {:+.4} not larger than all-correct {:+.4}",
        all_wrong.bias,
        all_correct.bias
    );
    assert!(
        near_a.mse <= 2.0 * all_correct.mse && near_b.mse <= 2.0 * all_correct.mse,
        "near-correct mses {:.4}/{:.4} vs all-correct {:.4}",
        near_a.mse,
        near_b.mse,
        all_correct.mse
    );
    println!("criterion 08 PASS");
}

#[test]
fn criterion_09_if_variance_tracks_bootstrap() {
    let cfg = ScenarioConfig {
        scenario: Scenario::Sim2Linear,
        n: 2000,
        delta: 0.5,
        reps: 1,
        bootstrap_b: 0,
        seed: 5150,
    };
    let linear_spec = spec(
        Method::ElwMis,
        vec![
            model(Arm::Treated, ModelFamily::Linear, vec![0, 1, 2]),
            model(Arm::Control, ModelFamily::Linear, vec![0, 1, 2]),
        ],
        "ELW-Linear",
    );
    let mut worst: f64 = 0.0;
    for rep in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(rep);
        let data = generate(&cfg, &mut rng).unwrap();
        let set = assemble_model_set(&linear_spec.models, &data).unwrap();
        let ifv = if_variance_nomissing(&data, &set.g_models[0], &set.h_models[0]).unwrap();
        let boot = bootstrap_se(&data, &linear_spec, 500, 900 + rep, false).unwrap();
        let ratio = ifv.se() / boot.se;
        worst = worst.max((ratio - 1.0).abs());
        assert!(
            (ratio - 1.0).abs() <= 0.15,
            "replicate {rep}: IF se {:.4} vs bootstrap se {:.4} (ratio {ratio:.3})",
            ifv.se(),
            boot.se
        );
    }
    println!("criterion 09 PASS: worst |ratio-1| = {worst:.3} over 20 replicates");
}

#[test]
fn criterion_10_exact_regime_degeneracies() {
    // Empty constraints reduce every ELW variant to the unadjusted
    // estimator.
    let x = dmatrix![0.4; 1.2; -0.3; 0.9; 2.0; -1.1; 0.1; 1.5];
    let data = TrialData::new(
        vec![1, 1, 1, 1, 0, 0, 0, 0],
        vec![1; 8],
        [31.0, 42.5, 28.7, 39.9, 30.2, 25.4, 41.1, 33.8].iter().map(|v| Some(*v)).collect(),
        x.clone(),
    )
    .unwrap();
    let empty = OutcomeModel::Identity(IdentityModel { feature_indices: vec![] });
    let elw = estimate_elw(&data, &empty, &empty, &SolverOptions::default()).unwrap();
    let unadj = estimate_unadjusted(&data);
    let gap = (elw.theta_hat - unadj.theta_hat).abs();
    assert!(gap <= 1e-12, "empty-constraint gap {gap}");

    // No missingness: the missing-outcome path reproduces the
    // complete-outcome path exactly.
    let ident = OutcomeModel::Identity(IdentityModel { feature_indices: vec![0] });
    let set = WorkingModelSet {
        g_models: vec![ident.clone()],
        h_models: vec![ident.clone()],
        ..WorkingModelSet::default()
    };
    let a = estimate_elw(&data, &ident, &ident, &SolverOptions::default()).unwrap();
    let b = estimate_elw_missing(&data, &set, &SolverOptions::default()).unwrap();
    assert_eq!(a.theta_hat, b.theta_hat, "elw vs elw_mis on complete data");

    // Identical covariate rows across arms: pooled and own-arm targets
    // coincide bit for bit, so qz equals elw_mis.
    let x2 = dmatrix![0.3; 1.9; -0.7; 1.1; 0.3; 1.9; -0.7; 1.1];
    let data2 = TrialData::new(
        vec![1, 1, 1, 1, 0, 0, 0, 0],
        vec![1, 1, 0, 1, 1, 0, 1, 1],
        vec![Some(1.0), Some(2.0), None, Some(0.7), Some(0.5), None, Some(1.3), Some(0.2)],
        x2,
    )
    .unwrap();
    let mis = estimate_elw_missing(&data2, &set, &SolverOptions::default()).unwrap();
    let qz = estimate_qz(&data2, &set, &SolverOptions::default()).unwrap();
    assert_eq!(mis.theta_hat, qz.theta_hat, "qz vs elw_mis with identical arms");

    println!("criterion 10 PASS: empty-constraint gap {gap:.1e}, exact path equalities hold");
}

#[test]
fn criterion_11_cli_determinism_across_thread_counts() {
    let exe = env!("CARGO_BIN_EXE_elw");
    let run = |threads: &str| -> (Vec<u8>, std::process::ExitStatus) {
        let out = std::process::Command::new(exe)
            .args([
                "simulate",
                "--scenario",
                "sim3",
                "--n",
                "200",
                "--reps",
                "30",
                "--bootstrap",
                "40",
                "--seed",
                "1234",
                "--threads",
                threads,
            ])
            .output()
            .expect("binary runs");
        (out.stdout, out.status)
    };
    let (one, status) = run("1");
    assert!(status.success());
    assert!(!one.is_empty());
    let (two, _) = run("2");
    let (eight, _) = run("8");
    assert_eq!(one, two, "1-thread vs 2-thread output differs");
    assert_eq!(one, eight, "1-thread vs 8-thread output differs");
    println!("criterion 11 PASS: {} output bytes identical across 1/2/8 threads", one.len());
}

/// Spot check supporting criterion 1's framing: the solver also matches
/// the oracle when auto augmentation is disabled and the instance is
/// feasible but asymmetric.
#[test]
fn oracle_spot_check_without_augmentation() {
    let u = dmatrix![-1.0, 0.2; 0.4, -0.9; 2.0, 0.7; -0.5, 0.8; 0.1, -0.3];
    let interior = {
        // Feasibility: find weights summing to one with U'w = 0 via the
        // oracle itself starting from uniform after projecting; the rows
        // here are centered by construction below.
        DVector::from_element(5, 0.2)
    };
    let mut centered = u.clone();
    for k in 0..2 {
        let pinned: f64 = (0..5).map(|j| interior[j] * u[(j, k)]).sum();
        for j in 0..5 {
            centered[(j, k)] -= pinned;
        }
    }
    let opts = SolverOptions { auto_augment: false, ..SolverOptions::default() };
    let sol = solve_weights(&ConstraintMatrix::new(centered.clone()).unwrap(), &opts).unwrap();
    let oracle = primal_oracle(&centered, &interior);
    for j in 0..5 {
        assert!((sol.weights[j] - oracle[j]).abs() <= 1e-6);
    }
}

/// Regression guard for the estimator plumbing the criteria lean on:
/// run_estimator refits models per dataset, so bootstrap and Monte Carlo
/// paths see fresh fits.
#[test]
fn run_estimator_refits_models_per_dataset() {
    let cfg = ScenarioConfig {
        scenario: Scenario::sim3_printed(),
        n: 300,
        delta: 0.5,
        reps: 1,
        bootstrap_b: 0,
        seed: 4242,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0);
    let data_a = generate(&cfg, &mut rng).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let data_b = generate(&cfg, &mut rng).unwrap();
    let s = sim3_panel(Method::ElwMis, "elw_mis");
    let a = run_estimator(&s, &data_a).unwrap();
    let b = run_estimator(&s, &data_b).unwrap();
    assert_ne!(a.theta_hat, b.theta_hat);
}
