//! `dkf`: generate data, train, evaluate, sample, ask counterfactuals and
//! run self-checks. Exit codes: 0 success, 1 usage error, 2 runtime failure.

mod commands;
mod config;
mod image;
mod selfcheck;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dkf::model::Variant;

/// An invalid flag, config key or query field.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "dkf", version, about = "Deep Kalman filters: training, evaluation and counterfactual inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset.
    Generate(GenerateArgs),
    /// Fit a model and log the bound per epoch.
    Train(TrainArgs),
    /// Held-out bound and importance-sampled log-likelihood.
    Eval(EvalArgs),
    /// Simulate sequences under constant actions.
    Sample(SampleArgs),
    /// Contrast two future action sequences from the same history.
    Counterfactual(CounterfactualArgs),
    /// Gradient, KL and factorization checks against exact references.
    Selfcheck(SelfcheckArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Two glyphs (one per class).
    SmallHealing,
    /// 100 glyphs per class.
    LargeHealing,
    /// A random linear-Gaussian system, with its parameters saved alongside.
    LinearOracle,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub preset: Preset,
    /// Output dataset file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of the full 40000-sequence Healing set.
    #[arg(long, default_value_t = 0.05)]
    pub scale: f64,
    /// Exact sequence count; overrides `--scale`.
    #[arg(long)]
    pub sequences: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// TOML file; its `[healing]` table replaces the preset's generator settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub latent_dim: usize,
    #[arg(long, default_value_t = 2)]
    pub obs_dim: usize,
    #[arg(long, default_value_t = 1)]
    pub action_dim: usize,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse::<Variant>().map_err(|e| e.to_string())
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory for the checkpoint, metrics and resolved config.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Held-out dataset evaluated at the configured cadence.
    #[arg(long)]
    pub eval: Option<PathBuf>,
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    /// Linear transition and emission with Gaussian observations.
    #[arg(long)]
    pub linear: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Importance samples for the large-sample estimate.
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Evaluate only the first N sequences.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Linear-Gaussian parameters for the exact log-likelihood; defaults to
    /// the dataset's `.theta.ntc` sidecar when present.
    #[arg(long)]
    pub system: Option<PathBuf>,
    /// Also write the report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// One grid row per action value (applied to every action component).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-1,-0.5,0,0.5,1")]
    pub actions: Vec<f64>,
    /// Sequences per action value.
    #[arg(long, default_value_t = 1)]
    pub rows: usize,
    #[arg(long, default_value_t = 5)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct CounterfactualArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// JSON query: prefix_x, prefix_u, factual, alternative and optional
    /// num_samples, do_assignments, start, threshold, seed.
    #[arg(long)]
    pub query: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Intervention `CHANNEL=VALUE` on the indicator channel.
    #[arg(long = "do", value_parser = parse_assignment)]
    pub do_assignments: Vec<(usize, f64)>,
    /// Report the share of samples with `CHANNEL` above `VALUE`.
    #[arg(long, value_parser = parse_assignment)]
    pub threshold: Option<(usize, f64)>,
}

fn parse_assignment(s: &str) -> Result<(usize, f64), String> {
    let (ch, v) = s.split_once('=').ok_or_else(|| format!("expected CHANNEL=VALUE, got {s:?}"))?;
    let ch = ch.trim().parse().map_err(|_| format!("bad channel {ch:?}"))?;
    let v = v.trim().parse().map_err(|_| format!("bad value {v:?}"))?;
    Ok((ch, v))
}

#[derive(Args, Debug)]
pub struct SelfcheckArgs {
    /// Tolerance for the KL and factorization checks.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Relative-error tolerance for the gradient check.
    #[arg(long, default_value_t = 1e-4)]
    pub grad_tol: f64,
    /// Random instances per configuration.
    #[arg(long, default_value_t = 5)]
    pub instances: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let usage = err.downcast_ref::<UsageError>().is_some()
        || matches!(err.downcast_ref::<dkf::Error>(), Some(dkf::Error::InvalidArgument(_)));
    if usage {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Sample(a) => commands::sample(&a),
        Command::Counterfactual(a) => commands::counterfactual(&a),
        Command::Selfcheck(a) => selfcheck::run(&a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
