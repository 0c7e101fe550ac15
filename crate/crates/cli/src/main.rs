//! `checkup`: run simulations, campaign searches, comparisons and fits from
//! scenario files.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use checkup_core::{ConfigError, NumericError, SimError};

#[derive(Parser, Debug)]
#[command(name = "checkup", version, about = "Cancer check-up SMS campaign simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check a scenario file and print its size.
    Validate(ScenarioArgs),
    /// Run the scenario under one campaign.
    Simulate(SimulateArgs),
    /// Monte Carlo search for a campaign tensor.
    Optimize(OptimizeArgs),
    /// Compare campaign strategies over shared replicate seeds.
    Compare(CompareArgs),
    /// Average yearly SMSs per individual in each group under a tensor.
    Heatmap(HeatmapArgs),
    /// Fit population parameters to a historical mortality series.
    Fit(FitArgs),
    /// Build scenario inputs from annual statistics.
    Ingest(IngestArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Args, Debug, Clone)]
pub struct ScenarioArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Scale population counts and budget; overrides the file's `scale`.
    #[arg(long)]
    pub scale: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// `none`, `naive`, `greedy`, or the path of a tensor CSV.
    #[arg(long, default_value = "none")]
    pub campaign: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    pub replicates: usize,
    /// Also write the per-individual event log.
    #[arg(long)]
    pub events: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum DimensionsArg {
    StatusOnly,
    Socio,
}

#[derive(Args, Debug)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, value_enum, default_value = "socio")]
    pub dimensions: DimensionsArg,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    /// Replicates per candidate evaluation.
    #[arg(long, default_value_t = 5)]
    pub replicates: usize,
    /// Rounds per time block.
    #[arg(long, default_value_t = 28)]
    pub block: u32,
    /// Dirichlet concentration of each axis of a candidate.
    #[arg(long, default_value_t = 0.5)]
    pub shape: f64,
    /// Fresh replicate seeds per candidate instead of shared ones.
    #[arg(long)]
    pub fresh_seeds: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Comma-separated: none, naive, greedy, naive-mc=PATH, socio-mc=PATH.
    #[arg(long, value_delimiter = ',', default_value = "none,naive,greedy")]
    pub strategies: Vec<String>,
    #[arg(long, default_value_t = 30)]
    pub replicates: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct HeatmapArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long)]
    pub tensor: PathBuf,
    /// Seed of the population whose group sizes are used.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// CSV with columns `round,value`.
    #[arg(long)]
    pub history: PathBuf,
    /// JSON listing the parameters, their bounds and starts.
    #[arg(long)]
    pub params: PathBuf,
    /// Campaign active during the history.
    #[arg(long, default_value = "none")]
    pub campaign: String,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub r2_target: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Scenario to update.
    #[arg(long)]
    pub scenario: PathBuf,
    /// `year,value` CSV of annual growth rates.
    #[arg(long)]
    pub growth: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub window_lo: usize,
    #[arg(long, default_value_t = 25)]
    pub window_hi: usize,
    /// CSV with columns `year,average,gender_gap,ses1..ses10`.
    #[arg(long)]
    pub life: Option<PathBuf>,
    /// Row of the life CSV to use; the last one by default.
    #[arg(long)]
    pub year: Option<i32>,
    /// CSV with columns `n,effect`.
    #[arg(long)]
    pub sms: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Where to write the replayed outputs.
    #[arg(long)]
    pub out: PathBuf,
}

/// A problem with user-supplied input, reported with exit code 2.
#[derive(Debug)]
pub struct InputError(pub String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn is_config_error(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.downcast_ref::<ConfigError>().is_some()
            || e.downcast_ref::<InputError>().is_some()
            || matches!(e.downcast_ref::<SimError>(), Some(SimError::Config(_)))
            || matches!(
                e.downcast_ref::<NumericError>(),
                Some(NumericError::Sim(SimError::Config(_)))
            )
    })
}

fn configure_workers() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("CHECKUP_WORKERS") {
        let n: usize = v
            .parse()
            .map_err(|_| InputError(format!("CHECKUP_WORKERS must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(InputError("CHECKUP_WORKERS must be at least 1".into()).into());
        }
        // a pool may already exist when called twice in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = configure_workers().and_then(|_| commands::run(cli, &argv[1..]));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_config_error(&e) { 2 } else { 1 })
        }
    }
}
