//! Command-line interface: `estimate` runs the configured estimators on a
//! CSV dataset and prints the estimate report; `simulate` reproduces the
//! simulation studies and prints the metrics table.
//!
//! Reports go to standard output, diagnostics to standard error. Exit
//! codes: 0 success, 2 usage or validation error, 3 numeric failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use elw::dataio::{
    load_csv, parse_config_file, write_estimate_report, write_metrics_report, EstimateReportRow,
    OutputFormat,
};
use elw::estimators::{run_estimator, Arm, EstimatorSpec, Method};
use elw::inference::{bootstrap_se, wald};
use elw::models::{ModelFamily, ModelSpec};
use elw::simlab::{run_monte_carlo, CustomScenario, Scenario, ScenarioConfig};

#[derive(Parser)]
#[command(name = "elw", version, about = "Empirical-likelihood weighted treatment-effect estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate treatment effects on a CSV dataset.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo simulation study.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct EstimateArgs {
    /// Trial dataset (CSV with header).
    #[arg(long)]
    data: PathBuf,
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Also write the report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores). Results do not depend on this.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ScenarioName {
    #[value(name = "sim2-linear")]
    Sim2Linear,
    #[value(name = "sim2-nonlinear")]
    Sim2Nonlinear,
    Sim3,
    Sim4,
    Custom,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    scenario: ScenarioName,
    /// Monte Carlo replicates.
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    /// Sample size per replicate.
    #[arg(long, default_value_t = 400)]
    n: usize,
    /// Treatment assignment probability.
    #[arg(long, default_value_t = 0.5)]
    delta: f64,
    /// Bootstrap replicates per dataset (0 skips bootstrap metrics).
    #[arg(long, default_value_t = 500)]
    bootstrap: usize,
    /// RNG seed; falls back to ELW_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// Model-usage bitstrings for sim4 (e.g. 10101010); repeatable.
    #[arg(long = "models")]
    models: Vec<String>,
    /// Custom scenario description (JSON), required for --scenario custom.
    #[arg(long)]
    custom_config: Option<PathBuf>,
    /// Report format.
    #[arg(long, value_enum, default_value_t = FormatName::Markdown)]
    format: FormatName,
    /// Also write the report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores). Results do not depend on this.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum FormatName {
    Markdown,
    Csv,
}

impl From<FormatName> for OutputFormat {
    fn from(f: FormatName) -> Self {
        match f {
            FormatName::Markdown => OutputFormat::Markdown,
            FormatName::Csv => OutputFormat::Csv,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Estimate(args) => cmd_estimate(args),
        Command::Simulate(args) => cmd_simulate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Numeric(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

enum CliError {
    Usage(String),
    Numeric(String),
}

fn usage<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Usage(e.to_string())
}

fn numeric<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Numeric(e.to_string())
}

fn install_thread_pool(threads: usize) -> Result<(), CliError> {
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| usage(format!("cannot configure {threads} threads: {e}")))?;
    }
    Ok(())
}

fn default_seed(cli_seed: Option<u64>) -> u64 {
    cli_seed
        .or_else(|| std::env::var("ELW_SEED").ok().and_then(|v| v.parse().ok()))
        .unwrap_or(0)
}

fn emit(report: &str, out: Option<&PathBuf>) -> Result<(), CliError> {
    print!("{report}");
    if let Some(path) = out {
        std::fs::write(path, report)
            .map_err(|e| usage(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}

fn cmd_estimate(args: EstimateArgs) -> Result<(), CliError> {
    install_thread_pool(args.threads)?;
    let config = parse_config_file(&args.config).map_err(usage)?;
    let data = load_csv(&args.data, &config.schema).map_err(usage)?;
    let seed = default_seed(config.seed);

    // The unadjusted SE anchors the relative-efficiency column.
    let unadjusted_spec = EstimatorSpec::new(Method::Unadjusted);
    let unadjusted_boot = bootstrap_se(
        &data,
        &unadjusted_spec,
        config.bootstrap.replicates,
        seed,
        config.bootstrap.stratified,
    )
    .map_err(numeric)?;

    let mut rows = Vec::with_capacity(config.estimators.len());
    for (i, spec) in config.estimators.iter().enumerate() {
        let estimate = run_estimator(spec, &data).map_err(numeric)?;
        if estimate.diagnostics.separation {
            eprintln!("warning: estimator '{}' fit a separated propensity model", spec.label());
        }
        let boot = bootstrap_se(
            &data,
            spec,
            config.bootstrap.replicates,
            seed.wrapping_add(i as u64 + 1),
            config.bootstrap.stratified,
        )
        .map_err(numeric)?;
        let rel_eff = if boot.se > 0.0 {
            (unadjusted_boot.se / boot.se).powi(2)
        } else {
            f64::INFINITY
        };
        rows.push(EstimateReportRow {
            estimator: spec.label(),
            wald: wald(estimate.theta_hat, boot.se),
            relative_efficiency: rel_eff,
        });
    }
    emit(&write_estimate_report(&rows, config.output_format), args.out.as_ref())
}

fn ident(arm: Arm, features: Vec<usize>) -> ModelSpec {
    ModelSpec { arm, family: ModelFamily::Identity, features }
}

fn linear(arm: Arm, features: Vec<usize>) -> ModelSpec {
    ModelSpec { arm, family: ModelFamily::Linear, features }
}

fn logistic(arm: Arm, features: Vec<usize>) -> ModelSpec {
    ModelSpec { arm, family: ModelFamily::Logistic, features }
}

/// Default estimator panels per scenario, mirroring the tables.
fn scenario_specs(name: ScenarioName, bits: &[String]) -> Result<Vec<EstimatorSpec>, CliError> {
    match name {
        ScenarioName::Sim2Linear | ScenarioName::Sim2Nonlinear => {
            let all = vec![0, 1, 2];
            let mut elw_ident = EstimatorSpec::new(Method::Elw);
            elw_ident.models =
                vec![ident(Arm::Treated, all.clone()), ident(Arm::Control, all.clone())];
            elw_ident.label = Some("ELW-Identity".into());
            let mut elw_linear = EstimatorSpec::new(Method::Elw);
            elw_linear.models = vec![linear(Arm::Treated, all.clone()), linear(Arm::Control, all)];
            elw_linear.label = Some("ELW-Linear".into());
            Ok(vec![EstimatorSpec::new(Method::Unadjusted), elw_ident, elw_linear])
        }
        ScenarioName::Sim3 => {
            let all = vec![0, 1, 2, 3];
            let panel = |method: Method, family: ModelFamily, label: &str| {
                let mut spec = EstimatorSpec::new(method);
                let outcome = |arm| ModelSpec { arm, family, features: all.clone() };
                spec.models = vec![
                    logistic(Arm::Treated, all.clone()),
                    logistic(Arm::Control, all.clone()),
                    outcome(Arm::Treated),
                    outcome(Arm::Control),
                ];
                spec.label = Some(label.into());
                spec
            };
            Ok(vec![
                panel(Method::ElwMis, ModelFamily::Identity, "ELW-Identity"),
                panel(Method::ElwMis, ModelFamily::Linear, "ELW-Linear"),
                panel(Method::Qz, ModelFamily::Identity, "QZ-Identity"),
                panel(Method::Qz, ModelFamily::Linear, "QZ-Linear"),
            ])
        }
        ScenarioName::Sim4 => {
            let default_bits = ["10101010", "01010101", "11111111", "10111011", "11101110"];
            let chosen: Vec<String> = if bits.is_empty() {
                default_bits.iter().map(|s| s.to_string()).collect()
            } else {
                bits.to_vec()
            };
            let mut specs = Vec::new();
            for b in &chosen {
                specs.push(sim4_spec(b, Method::ElwMr).map_err(CliError::Usage)?);
                specs.push(sim4_spec(b, Method::Hw).map_err(CliError::Usage)?);
            }
            Ok(specs)
        }
        ScenarioName::Custom => Err(CliError::Usage(
            "custom scenario estimators come from --custom-config".into(),
        )),
    }
}

/// Builds the sim4 estimator for a model-usage bitstring. Digit order:
/// treated propensity (correct, wrong), treated outcome (correct, wrong),
/// control propensity (correct, wrong), control outcome (correct, wrong).
/// Columns: x1..x4 = 0..3, s1 = 4, s2 = 5, s3 = 6.
fn sim4_spec(bits: &str, method: Method) -> Result<EstimatorSpec, String> {
    let flags: Vec<bool> = bits
        .chars()
        .map(|c| match c {
            '1' => Ok(true),
            '0' => Ok(false),
            other => Err(format!("bad digit '{other}' in model bitstring '{bits}'")),
        })
        .collect::<Result<_, _>>()?;
    if flags.len() != 8 {
        return Err(format!("model bitstring must have 8 digits, got '{bits}'"));
    }
    let mut models = Vec::new();
    let correct_outcome = vec![0, 1, 2, 3, 4];
    let wrong_outcome = vec![4, 5, 6];
    let mut arm_block = |arm: Arm, f: &[bool]| {
        if f[0] {
            models.push(logistic(arm, vec![5]));
        }
        if f[1] {
            models.push(logistic(arm, vec![0, 1, 2, 3, 4]));
        }
        if f[2] {
            models.push(linear(arm, correct_outcome.clone()));
        }
        if f[3] {
            models.push(linear(arm, wrong_outcome.clone()));
        }
    };
    arm_block(Arm::Treated, &flags[0..4]);
    arm_block(Arm::Control, &flags[4..8]);
    let mut spec = EstimatorSpec::new(method);
    spec.models = models;
    let prefix = match method {
        Method::Hw => "HW",
        _ => "ELW",
    };
    spec.label = Some(format!("{prefix}-{bits}"));
    Ok(spec)
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    install_thread_pool(args.threads)?;
    if args.reps == 0 {
        return Err(CliError::Usage("--reps must be at least 1".into()));
    }
    let (scenario, specs) = match args.scenario {
        ScenarioName::Sim2Linear => {
            (Scenario::Sim2Linear, scenario_specs(args.scenario, &args.models)?)
        }
        ScenarioName::Sim2Nonlinear => {
            (Scenario::Sim2Nonlinear, scenario_specs(args.scenario, &args.models)?)
        }
        ScenarioName::Sim3 => {
            (Scenario::sim3_printed(), scenario_specs(args.scenario, &args.models)?)
        }
        ScenarioName::Sim4 => (Scenario::Sim4, scenario_specs(args.scenario, &args.models)?),
        ScenarioName::Custom => {
            let path = args.custom_config.as_ref().ok_or_else(|| {
                CliError::Usage("--scenario custom requires --custom-config".into())
            })?;
            let text = std::fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
            let custom: CustomScenario = serde_json::from_str(&text)
                .map_err(|e| usage(format!("bad custom scenario config: {e}")))?;
            let p = custom.gaussian_mean.len() + custom.bernoulli_probs.len();
            let all: Vec<usize> = (0..p).collect();
            let mut elw_spec = EstimatorSpec::new(Method::Elw);
            elw_spec.models = vec![ident(Arm::Treated, all.clone()), ident(Arm::Control, all)];
            elw_spec.label = Some("ELW-Identity".into());
            let specs = vec![EstimatorSpec::new(Method::Unadjusted), elw_spec];
            (Scenario::Custom(custom), specs)
        }
    };
    let cfg = ScenarioConfig {
        scenario,
        n: args.n,
        delta: args.delta,
        reps: args.reps,
        bootstrap_b: args.bootstrap,
        seed: default_seed(args.seed),
    };
    cfg.validate().map_err(usage)?;
    let rows = run_monte_carlo(&cfg, &specs).map_err(numeric)?;
    let total_failures: usize = rows.iter().map(|r| r.failures).sum();
    if total_failures > 0 {
        eprintln!("note: {total_failures} replicate estimates failed and were excluded");
    }
    emit(&write_metrics_report(&rows, args.format.into()), args.out.as_ref())
}
