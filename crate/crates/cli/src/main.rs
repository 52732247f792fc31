mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Axis, RunConfig, SplitMode};

#[derive(Parser)]
#[command(name = "desmil", version, about = "Multi-interest recommendation with decorrelating sample weights")]
struct Cli {
    /// TOML file of configuration keys; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Root directory for run directories.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Partition an interaction log.
    Split(SplitArgs),
    /// Generate synthetic train and test logs.
    Synth(SynthArgs),
    /// Train a model on a split.
    Train(TrainArgs),
    /// Evaluate a checkpoint, or train and evaluate several seeds.
    Eval(EvalArgs),
    /// Train and evaluate over a grid of lambda and interest counts.
    Sweep(SweepArgs),
    /// Summarise the sample weights of a training run.
    DumpWeights(DumpArgs),
}

#[derive(Args)]
pub struct SplitArgs {
    /// Interaction log, `user_id\titem_id\ttimestamp` per line.
    #[arg(long)]
    input: PathBuf,
    /// Separate log whose sequences provide the test inputs and targets
    /// (OOD mode only).
    #[arg(long)]
    test_input: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<SplitMode>,
    #[arg(long)]
    z: Option<f64>,
    #[arg(long)]
    valid_ratio: Option<f64>,
    #[arg(long)]
    test_ratio: Option<f64>,
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    items: Option<usize>,
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    min_len: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    rho_train: Option<f64>,
    #[arg(long)]
    rho_test: Option<f64>,
    #[arg(long)]
    primary_share: Option<f64>,
}

/// Model and optimisation overrides shared by training commands.
#[derive(Args, Clone, Default)]
pub struct ModelArgs {
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    interests: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    l_max: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    eval_every: Option<u64>,
    #[arg(long)]
    weight_step: Option<f64>,
    /// Fixed RBF bandwidth instead of the median heuristic.
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long, value_enum)]
    axis: Option<Axis>,
    /// Train without sample weights.
    #[arg(long)]
    unweighted: bool,
    #[arg(long)]
    holdout: Option<f64>,
    #[arg(long)]
    expand_targets: bool,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Directory written by `split`.
    #[arg(long)]
    split: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    split: PathBuf,
    /// Run directory written by `train`.
    #[arg(long, conflicts_with = "seeds")]
    checkpoint: Option<PathBuf>,
    /// Train and evaluate this many consecutive seeds starting at `--seed`.
    #[arg(long)]
    seeds: Option<u64>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
pub struct SweepArgs {
    #[arg(long)]
    split: PathBuf,
    /// Comma-separated lambda values.
    #[arg(long, default_value = "0.01,0.1,1,10,100")]
    lambdas: String,
    /// Comma-separated interest counts.
    #[arg(long, default_value = "2,4,6,8")]
    interest_grid: String,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
pub struct DumpArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    run: PathBuf,
    #[arg(long, default_value_t = 10)]
    bins: usize,
}

macro_rules! overlay {
    ($cfg:expr, $args:expr; $($field:ident),*) => {
        $(if let Some(v) = $args.$field { $cfg.$field = v; })*
    };
}

impl ModelArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        overlay!(cfg, self; dim, interests, lambda, batch_size, lr, negatives, l_max, patience,
            max_epochs, eval_every, weight_step, axis, holdout);
        if self.hidden.is_some() {
            cfg.hidden = self.hidden;
        }
        if self.max_steps.is_some() {
            cfg.max_steps = self.max_steps;
        }
        if self.bandwidth.is_some() {
            cfg.bandwidth = self.bandwidth;
        }
        cfg.unweighted |= self.unweighted;
        cfg.expand_targets |= self.expand_targets;
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match cli.command {
        Command::Split(a) => {
            overlay!(cfg, a; mode, z, valid_ratio, test_ratio);
            commands::split(&a, cfg.resolved(), &cli.out)
        }
        Command::Synth(a) => {
            overlay!(cfg.synth, a; users, items, clusters, min_len, max_len, rho_train, rho_test, primary_share);
            commands::synth(cfg.resolved(), &cli.out)
        }
        Command::Train(a) => {
            a.model.apply(&mut cfg);
            let (dir, _) = commands::train(&a.split, cfg.resolved(), &cli.out)?;
            println!("{}", dir.display());
            Ok(())
        }
        Command::Eval(a) => {
            a.model.apply(&mut cfg);
            commands::eval(&a, cfg.resolved(), &cli.out)
        }
        Command::Sweep(a) => {
            a.model.apply(&mut cfg);
            commands::sweep(&a, cfg.resolved(), &cli.out)
        }
        Command::DumpWeights(a) => commands::dump_weights(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
