//! `htn`: command-line front end. JSON config in, CSV and a manifest out.
//!
//! Exit codes: 0 success, 1 invalid input, 2 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use htn::diffusion::{sample_marginals, simulate_sde, SdeSettings};
use htn::engine::{check_trace, run};
use htn::export::{customers_csv, marginals_csv, sde_csv, trace_csv, write_atomic};
use htn::harness::{compare_marginals, metrics_row, nash_experiment, rsp_experiment, ExperimentPlan, Report};
use htn::metrics::run_metrics;
use htn::{Model, ModelConfig, Policy, Scenario};

#[derive(Parser, Serialize)]
#[command(name = "htn", version, about = "Many-server queueing game simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
enum Command {
    /// Check a config and print rho, theta and M.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// One simulation run: event trace, customer table and run metrics.
    Simulate(SimulateArgs),
    /// Euler paths of the reflected limit SDE.
    Sde(SdeArgs),
    /// Snapshot-gap and collapse sweep over n.
    Rsp(RspArgs),
    /// Sampled-deviator equilibrium check.
    Nash(NashArgs),
    /// KS distances between scaled simulation and limit marginals.
    Compare(CompareArgs),
}

#[derive(Args, Serialize)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value = "fp", value_parser = ["fp", "slq"])]
    policy: String,
    /// Game horizon.
    #[arg(long, default_value_t = 5.0)]
    horizon: f64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    n: u64,
    /// `ref` or `dev:i:j` (1-based class).
    #[arg(long, default_value = "ref")]
    scenario: String,
    #[arg(long, default_value_t = 0)]
    replication: u64,
    /// Horizon of the path metrics, defaults to the game horizon.
    #[arg(long)]
    metric_horizon: Option<f64>,
}

#[derive(Args, Serialize)]
struct SdeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long, default_value_t = 10)]
    paths: usize,
    /// Initial state, comma separated; zero by default.
    #[arg(long, value_delimiter = ',')]
    x0: Option<Vec<f64>>,
    /// Write every k-th grid point of each path.
    #[arg(long, default_value_t = 10)]
    stride: usize,
    /// Times at which to export marginal samples.
    #[arg(long, value_delimiter = ',')]
    times: Vec<f64>,
    /// Test hook: drop the Brownian term.
    #[arg(long)]
    no_noise: bool,
    /// Test hook: force zero drift.
    #[arg(long)]
    zero_drift: bool,
    /// Test hook: replace the Brownian drift.
    #[arg(long, value_delimiter = ',')]
    lambda_hat: Option<Vec<f64>>,
}

#[derive(Args, Serialize)]
struct RspArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',', required = true)]
    n_list: Vec<u64>,
    #[arg(long, default_value_t = 1)]
    reps: u64,
    #[arg(long)]
    metric_horizon: Option<f64>,
}

#[derive(Args, Serialize)]
struct NashArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    n: u64,
    #[arg(long, default_value_t = 1)]
    reps: u64,
    #[arg(long, default_value_t = 0.15)]
    eps: f64,
    #[arg(long, default_value_t = 100)]
    deviators: usize,
}

#[derive(Args, Serialize)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',', required = true)]
    n_list: Vec<u64>,
    #[arg(long, default_value_t = 1)]
    reps: u64,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long, default_value_t = 4000)]
    paths: usize,
    /// Comparison times; the horizon by default.
    #[arg(long, value_delimiter = ',')]
    times: Vec<f64>,
}

enum Failure {
    Invalid(String),
    Runtime(String),
}

impl From<htn::Error> for Failure {
    fn from(e: htn::Error) -> Self {
        if e.is_validation() {
            Failure::Invalid(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(format!("Io: {e}"))
    }
}

fn lib<T, E: Into<htn::Error>>(r: Result<T, E>) -> Result<T, Failure> {
    r.map_err(|e| Failure::from(e.into()))
}

#[derive(Serialize)]
struct Manifest<'a> {
    artifact: &'static str,
    version: &'static str,
    invocation: &'a Command,
    config: &'a ModelConfig,
}

fn load(common: &Common) -> Result<(Model, Policy), Failure> {
    let model = lib(Model::load(&common.config))?;
    let policy = common.policy.parse::<Policy>().map_err(|e| Failure::Invalid(e.to_string()))?;
    Ok((model, policy))
}

fn finish(cmd: &Command, model: &Model, out: &Path, files: &[(&str, String)]) -> Result<(), Failure> {
    for (name, contents) in files {
        write_atomic(&out.join(name), contents)?;
    }
    let manifest = Manifest {
        artifact: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        invocation: cmd,
        config: model.config(),
    };
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    write_atomic(&out.join("manifest.json"), &json)?;
    Ok(())
}

fn plan(model: Model, policy: Policy, common: &Common, n_list: Vec<u64>, reps: u64) -> ExperimentPlan {
    ExperimentPlan::new(model, policy, n_list, reps, common.horizon, common.seed)
}

fn report_files(report: &Report, classes: usize) -> Vec<(&'static str, String)> {
    let mut files = vec![("report.csv", report.to_csv()), ("report.txt", report.summary())];
    if !report.runs.is_empty() {
        files.push(("metrics.csv", report.runs_csv(classes)));
    }
    files
}

fn execute(cmd: &Command) -> Result<(), Failure> {
    match cmd {
        Command::Validate { config } => {
            let model = lib(Model::load(config))?;
            println!("classes: {}", model.num_classes());
            for i in 0..model.num_classes() {
                println!("class {}: rho = {} theta = {}", i + 1, model.rho()[i], model.theta(i));
            }
            match model.m() {
                Some(m) => println!("M = {} (unique least threshold: {})", m + 1, model.has_unique_min_threshold()),
                None => println!("M undefined: thresholds are not non-increasing (SLQ unavailable)"),
            }
            Ok(())
        }
        Command::Simulate(a) => {
            let (model, policy) = load(&a.common)?;
            let scenario = a.scenario.parse::<Scenario>().map_err(|e| Failure::Invalid(format!("InvalidScenario: {e}")))?;
            let trace = lib(run(&model, policy, scenario, a.n, a.common.horizon, a.common.seed, a.replication))?;
            let check = check_trace(&trace, &model);
            if !check.ok() {
                return Err(Failure::Runtime(format!(
                    "InvariantViolation: {}",
                    check.violations.first().map(String::as_str).unwrap_or("")
                )));
            }
            let metric_horizon = a.metric_horizon.unwrap_or(a.common.horizon);
            let metrics = lib(run_metrics(&trace, &model, metric_horizon, a.replication))?;
            let mut report = Report::new("single run", policy);
            report.runs.push(metrics.clone());
            let files = [
                ("trace.csv", trace_csv(&trace)),
                ("customers.csv", customers_csv(&trace)),
                ("metrics.csv", report.runs_csv(model.num_classes())),
            ];
            finish(cmd, &model, &a.common.out, &files)?;
            print!("{}", metrics_row(&metrics));
            Ok(())
        }
        Command::Sde(a) => {
            let (model, policy) = load(&a.common)?;
            let x0 = a.x0.clone().unwrap_or_else(|| vec![0.0; model.num_classes()]);
            let mut settings = SdeSettings::new(a.dt, a.common.horizon);
            settings.noise = !a.no_noise;
            settings.zero_drift = a.zero_drift;
            settings.lambda_hat = a.lambda_hat.clone();
            let paths = lib(simulate_sde(policy, &model, &x0, &settings, a.common.seed, a.paths))?;
            let mut files = vec![("sde.csv", sde_csv(&paths, a.stride))];
            if !a.times.is_empty() {
                let samples =
                    lib(sample_marginals(policy, &model, &x0, &settings, a.common.seed, a.paths, &a.times))?;
                files.push(("marginals.csv", marginals_csv("sde", &a.times, &samples)));
            }
            finish(cmd, &model, &a.common.out, &files)
        }
        Command::Rsp(a) => {
            let (model, policy) = load(&a.common)?;
            let classes = model.num_classes();
            let mut p = plan(model.clone(), policy, &a.common, a.n_list.clone(), a.reps);
            p.metric_horizon = a.metric_horizon.unwrap_or(a.common.horizon);
            let report = lib(rsp_experiment(&p))?;
            print!("{}", report.summary());
            finish(cmd, &model, &a.common.out, &report_files(&report, classes))
        }
        Command::Nash(a) => {
            let (model, policy) = load(&a.common)?;
            let mut p = plan(model.clone(), policy, &a.common, vec![a.n], a.reps);
            p.eps = a.eps;
            p.deviators = a.deviators;
            let report = lib(nash_experiment(&p))?;
            print!("{}", report.summary());
            let mut files = report_files(&report, model.num_classes());
            if let Some(nash) = &report.nash {
                let mut gaps = String::from("replication,i,j,gap\n");
                for g in &nash.gaps {
                    gaps.push_str(&format!("{},{},{},{}\n", g.replication, g.class + 1, g.j, htn::harness::fmt_f64(g.gap)));
                }
                files.push(("gaps.csv", gaps));
            }
            finish(cmd, &model, &a.common.out, &files)
        }
        Command::Compare(a) => {
            let (model, policy) = load(&a.common)?;
            let mut p = plan(model.clone(), policy, &a.common, a.n_list.clone(), a.reps);
            p.sde = SdeSettings::new(a.dt, a.common.horizon);
            p.sde_paths = a.paths;
            p.compare_times = if a.times.is_empty() { vec![a.common.horizon] } else { a.times.clone() };
            let report = lib(compare_marginals(&p))?;
            print!("{}", report.summary());
            finish(cmd, &model, &a.common.out, &report_files(&report, model.num_classes()))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
