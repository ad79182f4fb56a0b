mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Stochastic OPF for radial feeders: build feeders, draw and reduce PV
/// scenarios, solve with decentralized ADMM, and compare with local control.
#[derive(Parser, Debug)]
#[command(name = "sopf", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build one of the parametric feeders, or one from a feeder spec JSON.
    BuildNetwork(BuildNetwork),
    /// Draw equiprobable PV scenarios from per-node beta laws.
    GenerateScenarios(GenerateScenarios),
    /// Greedy fast-forward reduction to fewer scenarios.
    Reduce(Reduce),
    /// Solve the stochastic program with ADMM.
    Solve(Solve),
    /// Evaluate the sufficient condition for an exact relaxation.
    CheckExactness(CheckExactness),
    /// Evaluate the local volt/VAR policy by exact power flow.
    Baseline(Baseline),
    /// Re-solve the second stage per test scenario with pc pinned.
    OnlineEval(OnlineEval),
    /// Run a full study from an experiment spec.
    RunExperiment(RunExperiment),
    /// Print the summary tables of an experiment directory.
    Report(Report),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Preset {
    DayType,
    LocalControl,
    RhoStudy,
}

#[derive(Args, Debug)]
pub struct BuildNetwork {
    #[arg(long, value_enum, conflicts_with = "spec")]
    pub preset: Option<Preset>,
    /// Feeder spec JSON (trunk length, laterals, spacing, PV layout).
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Seed of the random PV placement.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum CorrelationArg {
    Independent,
    CommonFactor,
}

#[derive(Args, Debug)]
pub struct GenerateScenarios {
    #[arg(long)]
    pub network: PathBuf,
    /// Mean of w / w_max, shared by all PV nodes.
    #[arg(long)]
    pub mean_ratio: f64,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "independent")]
    pub correlation: CorrelationArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum MetricArg {
    Euclidean,
    L1,
}

#[derive(Args, Debug)]
pub struct Reduce {
    #[arg(long)]
    pub scenarios: PathBuf,
    #[arg(long)]
    pub to: usize,
    #[arg(long, value_enum, default_value = "euclidean")]
    pub metric: MetricArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum RhoPolicyArg {
    Fixed,
    Adaptive,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum InitArg {
    Zeros,
    Random,
}

#[derive(Args, Debug, Clone)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 100.0)]
    pub rho: f64,
    #[arg(long, value_enum, default_value = "adaptive")]
    pub rho_policy: RhoPolicyArg,
    /// Primal and dual residual tolerance.
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    /// Largest accepted v·l − P² − Q² in pu².
    #[arg(long, default_value_t = 1e-3)]
    pub gap_tol: f64,
    #[arg(long, default_value_t = 20_000)]
    pub max_iters: usize,
    #[arg(long, value_enum, default_value = "random")]
    pub init: InitArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct ObjectiveArgs {
    /// Price of power bought at the substation.
    #[arg(long, default_value_t = 0.0)]
    pub cost_a: f64,
    /// Price of power sold back (b ≤ a).
    #[arg(long, default_value_t = 0.0)]
    pub cost_b: f64,
    #[arg(long, default_value_t = 1.0)]
    pub k_loss: f64,
}

#[derive(Args, Debug)]
pub struct Solve {
    #[arg(long)]
    pub network: PathBuf,
    #[arg(long)]
    pub scenarios: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub objective: ObjectiveArgs,
    /// Report JSON; the trace goes next to it as `<stem>.trace.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CheckExactness {
    #[arg(long)]
    pub network: PathBuf,
    #[arg(long)]
    pub scenarios: PathBuf,
    /// Judge by the scenario-independent condition instead of per scenario.
    #[arg(long)]
    pub m_independent: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct Baseline {
    #[arg(long)]
    pub network: PathBuf,
    /// Solve report or solution JSON holding the first-stage pc.
    #[arg(long)]
    pub pc: PathBuf,
    /// Blending gains, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub k: Vec<f64>,
    #[arg(long)]
    pub test_scenarios: PathBuf,
    /// Metrics JSON; one `<stem>.cdf_k<K>.csv` is written per gain.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct OnlineEval {
    #[arg(long)]
    pub network: PathBuf,
    #[arg(long)]
    pub pc: PathBuf,
    #[arg(long)]
    pub test_scenarios: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub objective: ObjectiveArgs,
    /// Force every inverter's reactive output to zero.
    #[arg(long)]
    pub no_reactive: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RunExperiment {
    #[arg(long)]
    pub spec: PathBuf,
    /// Overrides the spec's root seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct Report {
    #[arg(long)]
    pub dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(err.exit_code())
        }
    }
}
