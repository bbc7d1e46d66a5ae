//! `rcodtr`: simulate trials, fit resource-constrained rules and estimate
//! their value, MSM summaries and cost-effectiveness from CSV data.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid {flag}: {reason}")]
    Validation { flag: String, reason: String },
    #[error(transparent)]
    Core(#[from] rc_odtr::Error),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn validation(flag: &str, reason: impl Into<String>) -> Self {
        Self::Validation {
            flag: flag.to_string(),
            reason: reason.into(),
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_numerical() => 2,
            _ => 1,
        }
    }
}

#[derive(Parser)]
#[command(name = "rcodtr", version, about = "Resource-constrained optimal treatment rules")]
struct Cli {
    /// JSON file with default settings; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic trial and optionally its closed-form truth.
    Simulate(SimulateArgs),
    /// Fit the blip on all rows and report the rule along a kappa grid.
    FitRule(FitRuleArgs),
    /// Cross-validated value of the rule along a kappa grid.
    Evaluate(EvaluateArgs),
    /// Linear working model of value against kappa with bootstrap intervals.
    Msm(MsmArgs),
    /// Incremental cost-effectiveness along a kappa grid.
    Icer(IcerArgs),
    /// Treatment-by-covariate interaction tests.
    Subgroups(SubgroupArgs),
    /// Project a saved result into plot-ready CSV.
    PlotData(PlotArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum DgpName {
    #[value(alias = "adaptr_like")]
    AdaptrLike,
    #[value(alias = "constant_blip")]
    ConstantBlip,
    #[value(alias = "continuous_blip")]
    ContinuousBlip,
    #[value(alias = "null_effect")]
    NullEffect,
    #[value(alias = "one_interaction")]
    OneInteraction,
    #[value(alias = "strong_heterogeneity")]
    StrongHeterogeneity,
}

#[derive(Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "adaptr-like")]
    pub dgp: DgpName,
    /// Full process description as JSON; overrides --dgp and its parameters.
    #[arg(long)]
    pub dgp_spec: Option<PathBuf>,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Write the closed-form truth along --kappa-grid here.
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    #[arg(long)]
    pub kappa_grid: Option<String>,
    /// Blip for constant-blip.
    #[arg(long, default_value_t = 0.1)]
    pub blip: f64,
    /// Interaction for one-interaction.
    #[arg(long, default_value_t = 0.3)]
    pub interaction: f64,
    /// Blip range for continuous-blip.
    #[arg(long, default_value_t = -0.1, allow_hyphen_values = true)]
    pub low: f64,
    #[arg(long, default_value_t = 0.3, allow_hyphen_values = true)]
    pub high: f64,
    /// Randomization probability.
    #[arg(long, default_value_t = 0.5)]
    pub propensity: f64,
    /// Add a cost column equal to unit cost times A (plus noise).
    #[arg(long)]
    pub unit_cost: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub cost_noise_sd: f64,
}

#[derive(Args)]
pub struct DataArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub treatment: Option<String>,
    #[arg(long)]
    pub outcome: Option<String>,
    /// Comma-separated; defaults to every column not used otherwise.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    #[arg(long)]
    pub cost: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub y_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub y_max: Option<f64>,
}

#[derive(Args)]
pub struct EstimatorArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub sl_folds: Option<usize>,
    /// Known P(A = 1), as in a randomized trial.
    #[arg(long)]
    pub g_known: Option<f64>,
    #[arg(long)]
    pub estimate_g: Option<bool>,
    #[arg(long)]
    pub g_min: Option<f64>,
    /// Comma-separated from mean, main_terms, univariate, stepwise_aic.
    #[arg(long, value_delimiter = ',')]
    pub outcome_library: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    pub blip_library: Option<Vec<String>>,
    /// per_fold or shared.
    #[arg(long)]
    pub blip_fit: Option<String>,
    #[arg(long)]
    pub confidence: Option<f64>,
}

#[derive(Args)]
pub struct FitRuleArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub est: EstimatorArgs,
    #[arg(long)]
    pub kappa_grid: Option<String>,
    #[arg(long, alias = "save-model")]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub est: EstimatorArgs,
    #[arg(long)]
    pub kappa_grid: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct MsmArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub est: EstimatorArgs,
    #[arg(long)]
    pub kappa_grid: Option<String>,
    #[arg(long, alias = "bootstrap")]
    pub replicates: Option<usize>,
    /// refit or fixed-rule.
    #[arg(long, alias = "mode")]
    pub bootstrap_mode: Option<String>,
    /// Weight grid points by inverse variance.
    #[arg(long)]
    pub weighted: bool,
    #[arg(long)]
    pub level: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// CSV of kappa, value, fitted line and chord.
    #[arg(long)]
    pub plot_csv: Option<PathBuf>,
}

#[derive(Args)]
pub struct IcerArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub est: EstimatorArgs,
    #[arg(long)]
    pub kappa_grid: Option<String>,
    /// treat_none, treat_all or kappa:<value>.
    #[arg(long)]
    pub comparator: Option<String>,
    /// Report effects in raw outcome units instead of percentage points.
    #[arg(long)]
    pub raw_units: bool,
    #[arg(long)]
    pub den_epsilon: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// CSV of the cost-effectiveness plane.
    #[arg(long)]
    pub plane_csv: Option<PathBuf>,
}

#[derive(Args)]
pub struct SubgroupArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PlotKind {
    /// Distinct in-sample blips and their counts (needs --model).
    #[value(alias = "blip_hist")]
    BlipHist,
    /// Value estimates with intervals (evaluate results).
    #[value(alias = "value_curve")]
    ValueCurve,
    /// Values, fitted line and chord (msm results).
    Msm,
    /// Cost-effectiveness plane (icer results).
    Plane,
    /// Per-level subgroup effects (subgroups results).
    Subgroups,
}

#[derive(Args)]
pub struct PlotArgs {
    #[arg(long, value_enum)]
    pub what: PlotKind,
    /// Model written by fit-rule.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Results written by evaluate, msm, icer or subgroups.
    #[arg(long)]
    pub results: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::validation("--threads", "must be at least 1"));
        }
        // fails only if a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let file = config::FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Simulate(a) => commands::simulate(a, &file),
        Command::FitRule(a) => commands::fit_rule(a, &file),
        Command::Evaluate(a) => commands::evaluate(a, &file),
        Command::Msm(a) => commands::msm(a, &file),
        Command::Icer(a) => commands::icer(a, &file),
        Command::Subgroups(a) => commands::subgroups(a, &file),
        Command::PlotData(a) => commands::plot_data(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // usage errors are validation errors; --help and --version succeed
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numerical_failures_exit_two() {
        assert_eq!(CliError::Core(rc_odtr::Error::Singular).exit_code(), 2);
        let e = rc_odtr::Error::NonConvergence { what: "fluctuation", iterations: 100 };
        assert_eq!(CliError::Core(e).exit_code(), 2);
        assert_eq!(CliError::Core(rc_odtr::Error::SingleArm { arm: 1 }).exit_code(), 1);
        assert_eq!(CliError::validation("--n", "bad").exit_code(), 1);
    }
}
