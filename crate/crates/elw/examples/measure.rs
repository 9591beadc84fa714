use elw::estimators::{EstimatorSpec, Method, Arm};
use elw::models::{ModelFamily, ModelSpec};
use elw::simlab::*;
use std::time::Instant;

fn main() {
    let cfg = ScenarioConfig {
        scenario: Scenario::Sim2Linear, n: 400, delta: 0.5, reps: 1000, bootstrap_b: 500, seed: 20260810,
    };
    let mut ident = EstimatorSpec::new(Method::Elw);
    ident.models = vec![
        ModelSpec { arm: Arm::Treated, family: ModelFamily::Identity, features: vec![0,1,2] },
        ModelSpec { arm: Arm::Control, family: ModelFamily::Identity, features: vec![0,1,2] },
    ];
    ident.label = Some("ELW-Identity".into());
    let t0 = Instant::now();
    let rows = run_monte_carlo(&cfg, &[EstimatorSpec::new(Method::Unadjusted), ident]).unwrap();
    for r in &rows {
        println!("{}: bias={:+.4} se={:.4} cov={:.4} mse={:.4} used={}", r.estimator, r.bias, r.ave_boot_se, r.cov_prob_boot, r.mse, r.replicates_used);
    }
    println!("full scale took {:.0} s", t0.elapsed().as_secs_f64());
}
