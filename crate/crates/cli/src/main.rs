//! `wassl`: severity-aware Wasserstein losses from the command line.
//!
//! Exit codes: 0 on success, 2 for input or validation problems, 3 for
//! numerical failures (diverged training, unrecoverable solver state, or a
//! failed gradient check).

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "wassl",
    version,
    about = "Severity-aware Wasserstein losses for classification and segmentation"
)]
struct Cli {
    /// Override the seed from configs and defaults.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory that relative output paths are written under.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,

    /// Suppress human-readable summaries; keep machine outputs only.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a ground matrix from an importance grouping file.
    BuildMatrix(BuildMatrixArgs),
    /// Evaluate a loss between a prediction histogram and a target.
    LossEval(LossEvalArgs),
    /// Train the softmax model from a config file; writes the model,
    /// per-epoch stats and a test-split evaluation report.
    Train(TrainArgs),
    /// Evaluate a saved model on a dataset split.
    Evaluate(EvaluateArgs),
    /// Time the loss implementations across problem sizes.
    Bench(BenchArgs),
    /// Compare analytic parameter gradients against central differences.
    GradCheck(GradCheckArgs),
}

#[derive(Args)]
struct BuildMatrixArgs {
    /// Grouping JSON: {"classes": [{"name", "group"}], "weights": {id: w}}.
    #[arg(long)]
    grouping: PathBuf,
    /// Metric applied to the built matrix: identity | power:RHO | huber:TAU | step.
    #[arg(long)]
    metric: Option<String>,
    /// Output matrix path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LossEvalArgs {
    /// Prediction histogram, comma separated; normalized on load.
    #[arg(long)]
    s: String,
    /// Second histogram for a side-by-side comparison.
    #[arg(long)]
    s2: Option<String>,
    /// Target spec: onehot:J or soft:p0,p1,...
    #[arg(long)]
    target: String,
    /// Smoothing strength applied to a onehot target.
    #[arg(long)]
    smooth: Option<f64>,
    /// Ground matrix file (required for wasserstein and sinkhorn).
    #[arg(long)]
    matrix: Option<PathBuf>,
    /// Metric applied to the loaded matrix.
    #[arg(long)]
    metric: Option<String>,
    /// wasserstein | ce | l1 | sinkhorn
    #[arg(long, default_value = "wasserstein")]
    loss: String,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value_t = 1000)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Also run the exact LP and report the absolute gap.
    #[arg(long)]
    oracle: bool,
    /// Additionally report the metric's post-hoc root of the loss (the
    /// distance-like normalization; reporting only, never inside a loss).
    #[arg(long)]
    root_normalize: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Training config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Start from a saved model instead of a fresh initialization.
    #[arg(long)]
    warm_start: Option<PathBuf>,
    /// Seed sweep (e.g. 0..9 or 0,3,7): per seed, trains the CE baseline
    /// and the configured loss (warm-started from the baseline), then
    /// writes a severity comparison summary.
    #[arg(long)]
    seeds: Option<String>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Saved model to score (with --dataset).
    #[arg(long, requires = "dataset")]
    model: Option<PathBuf>,
    #[arg(long, requires = "model")]
    dataset: Option<PathBuf>,
    /// Ground-truth segmentation map, JSON or headerless CSV
    /// (with --preds; alternative to --model/--dataset).
    #[arg(long, requires = "preds", conflicts_with = "model")]
    truths: Option<PathBuf>,
    #[arg(long, requires = "truths")]
    preds: Option<PathBuf>,
    /// Class count for map evaluation; inferred from --matrix when omitted.
    #[arg(long)]
    classes: Option<usize>,
    /// train | val | test
    #[arg(long, default_value = "test")]
    split: String,
    /// Ground matrix for the severity error (0/1 matrix if omitted).
    #[arg(long)]
    matrix: Option<PathBuf>,
    /// Grouping for the per-group IoU breakdown.
    #[arg(long)]
    grouping: Option<PathBuf>,
    /// Report path.
    #[arg(long, default_value = "eval_report.json")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated bin counts, each >= 2.
    #[arg(long, default_value = "16,256,4096")]
    sizes: String,
    #[arg(long, default_value_t = 5)]
    repetitions: usize,
    /// Fixed Sinkhorn iteration count (isolates per-iteration cost).
    #[arg(long, default_value_t = 10)]
    sinkhorn_iters: usize,
    /// Optional CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradCheckArgs {
    /// ce | wasserstein | l1
    #[arg(long, default_value = "wasserstein")]
    loss: String,
    /// Ground matrix file; defaults to the 0/1 matrix.
    #[arg(long)]
    matrix: Option<PathBuf>,
    /// Metric applied to the loaded matrix.
    #[arg(long)]
    metric: Option<String>,
    #[arg(long, default_value_t = 5)]
    classes: usize,
    #[arg(long, default_value_t = 4)]
    feature_dim: usize,
    #[arg(long, default_value_t = 8)]
    pixels: usize,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 1e-4)]
    rel_tol: f64,
    #[arg(long, default_value_t = 1e-8)]
    abs_tol: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ctx = commands::Context {
        seed: cli.seed,
        out_dir: cli.out_dir,
        quiet: cli.quiet,
    };
    let result = match cli.command {
        Command::BuildMatrix(args) => commands::build_matrix::run(&ctx, &args),
        Command::LossEval(args) => commands::loss_eval::run(&ctx, &args),
        Command::Train(args) => commands::train::run(&ctx, &args),
        Command::Evaluate(args) => commands::evaluate::run(&ctx, &args),
        Command::Bench(args) => commands::bench::run(&ctx, &args),
        Command::GradCheck(args) => commands::grad_check::run(&ctx, &args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
