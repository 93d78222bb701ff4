//! `hiex`: hierarchical interaction explanations from the command line.

mod commands;
mod inputs;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "hiex", version, about = "Hierarchical interaction explanations for black-box predictors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Explain one or more instances with a hierarchy of interactions.
    Explain(ExplainArgs),
    /// Rank candidate interactions in the vicinity of one instance.
    Detect(ExplainArgs),
    /// Test whether an interaction keeps its polarity across instances and
    /// flips everywhere after a single-instance edit.
    Contextfree(ContextFreeArgs),
    /// Run the ground-truth benchmark on a synthetic function.
    Bench(BenchArgs),
    /// Write the planted-interaction sentiment model and its data.
    MakeToy(MakeToyArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Master seed; every stage seed derives from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "hiex-out")]
    pub out: PathBuf,
    /// TOML file with defaults for any flag.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Worker threads for instance- and trial-level parallelism.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SamplerArgs {
    /// `builtin:F1`, `network:model.json` or `external:COMMAND`.
    #[arg(long)]
    pub predictor: Option<String>,
    /// Output head of an external predictor: regression or probability.
    #[arg(long)]
    pub head: Option<String>,
    /// Vicinity scale and truncation radius.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Distance: l2, cosine or edit. Inferred from the instance kind.
    #[arg(long)]
    pub metric: Option<String>,
    #[arg(long)]
    pub n_samples: Option<usize>,
    /// Upper bound on interaction levels; 0 gives a linear-only explanation.
    #[arg(long)]
    pub levels_max: Option<usize>,
    /// Relative validation improvement a level must bring.
    #[arg(long)]
    pub stop_improvement: Option<f64>,
    /// Consecutive rejected levels before stopping.
    #[arg(long)]
    pub stop_patience: Option<usize>,
    /// Explain probability heads on the probability scale instead of logits.
    #[arg(long)]
    pub raw_probability: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    /// `origin`, `0.1,0.2,...`, `bits:0,1,...` or `text:some words`.
    #[arg(long, conflicts_with = "instances_file")]
    pub instance: Option<String>,
    /// One instance per line.
    #[arg(long)]
    pub instances_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ContextFreeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    /// Instances to scan, one per line.
    #[arg(long)]
    pub instances_file: PathBuf,
    /// Ordered tokens `not,bad` or feature indices `#0,1`.
    #[arg(long)]
    pub pattern: Option<String>,
    /// Edit magnitude: the interaction term becomes `-c` times itself.
    #[arg(long)]
    pub c: Option<f64>,
    /// Edit the model and rescan (the default).
    #[arg(long, overrides_with = "no_edit")]
    pub edit: bool,
    /// Only report polarity before any edit.
    #[arg(long)]
    pub no_edit: bool,
    #[arg(long)]
    pub fine_tune_steps: Option<usize>,
    /// Labelled held-out data (`label<TAB>instance`) for the task metric.
    #[arg(long)]
    pub holdout: Option<PathBuf>,
    /// Scan at 0.4, 0.6, 0.8 and 1.0 times the mean pairwise distance of
    /// the instances instead of a single sigma; no edit.
    #[arg(long)]
    pub sigma_grid: bool,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// F1, F2, F3 or F4.
    #[arg(long)]
    pub function: Option<String>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Instances per trial.
    #[arg(long)]
    pub instances: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub n_samples: Option<usize>,
    /// Probe points per instance for the interaction-fit score.
    #[arg(long)]
    pub probes: Option<usize>,
    /// Skip the pairwise lasso baseline.
    #[arg(long)]
    pub no_glm: bool,
}

#[derive(Debug, Clone, Args)]
pub struct MakeToyArgs {
    #[arg(long, default_value = "toy")]
    pub out: PathBuf,
    /// Sentences containing the planted pattern.
    #[arg(long, default_value_t = 24)]
    pub sentences: usize,
    /// Labelled held-out sentences.
    #[arg(long, default_value_t = 500)]
    pub holdout: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// 2 usage or configuration, 3 predictor failure, 4 numerical failure.
fn exit_code(err: &anyhow::Error) -> u8 {
    use hiex_core::Error as E;
    match err.chain().find_map(|e| e.downcast_ref::<hiex_core::Error>()) {
        Some(E::Predictor { .. } | E::InputShape { .. }) => 3,
        Some(
            E::Numerical(_) | E::Divergence { .. } | E::FineTuneDivergence { .. } | E::Sampling(_) | E::Metric(_),
        ) => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MAHE_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Explain(a) => commands::explain(&a, false),
        Command::Detect(a) => commands::explain(&a, true),
        Command::Contextfree(a) => commands::contextfree(&a),
        Command::Bench(a) => commands::bench(&a),
        Command::MakeToy(a) => commands::make_toy(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
