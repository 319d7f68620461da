mod commands;
mod config_file;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

/// TFMAN super-resolution toolkit: degradation pipelines, training,
/// inference, Y-channel PSNR/SSIM evaluation, the SRNL cost model and
/// gradient verification.
#[derive(Parser)]
#[command(name = "tfman", version, about)]
struct Cli {
    /// Worker thread cap (falls back to TFMAN_THREADS, then all cores).
    /// Results are bitwise identical at any setting.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Produce LR counterparts of every HR image in a directory.
    Degrade(DegradeArgs),
    /// Train a model and write checkpoints plus a loss trace CSV.
    Train(TrainArgs),
    /// Super-resolve one PNG with a trained checkpoint.
    Infer(InferArgs),
    /// Benchmark a checkpoint or the bicubic baseline on a dataset.
    Eval(EvalArgs),
    /// Closed-form MAC/memory comparison of non-local vs SRNL.
    Cost(CostArgs),
    /// Finite-difference verification of the analytic gradients.
    Gradcheck(GradcheckArgs),
    /// Parameter count and per-subtree breakdown of a configuration.
    Params(ParamsArgs),
}

#[derive(Args)]
struct DegradeArgs {
    /// Directory of HR PNGs (or a dataset root containing HR/).
    #[arg(long)]
    hr_dir: PathBuf,
    /// Output directory for the LR PNGs (created if missing).
    #[arg(long)]
    out_dir: PathBuf,
    /// Degradation model: bi, bd or dn.
    #[arg(long)]
    kind: String,
    /// Scale factor: 2, 3, 4 or 8.
    #[arg(long)]
    scale: usize,
    /// Master noise seed (per-file streams derive from it and the stem).
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// key=value configuration file (model and trainer keys).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root: HR PNGs in <dir>/HR or directly inside.
    #[arg(long)]
    data_dir: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Resume from an existing checkpoint (fine-tuning).
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Loss trace CSV path (default: <out>.loss.csv).
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Input PNG.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output PNG (extents scale times the input).
    #[arg(long = "out")]
    output: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to evaluate; mutually exclusive with --baseline.
    #[arg(long, conflicts_with = "baseline")]
    ckpt: Option<PathBuf>,
    /// Reference upscaler; only `bicubic` is available.
    #[arg(long)]
    baseline: Option<String>,
    /// Dataset root (HR PNGs in <dir>/HR or directly inside).
    #[arg(long)]
    dataset: PathBuf,
    /// Degradation model: bi, bd or dn.
    #[arg(long, default_value = "bi")]
    kind: String,
    #[arg(long)]
    scale: usize,
    /// Border shave in pixels before scoring (default: the scale factor).
    #[arg(long)]
    crop: Option<usize>,
    /// Noise seed for the dn degradation.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the per-image rows as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct CostArgs {
    #[arg(long)]
    height: usize,
    #[arg(long)]
    width: usize,
    #[arg(long, default_value_t = 128)]
    channels: usize,
    #[arg(long, default_value_t = 48)]
    p: usize,
    /// Emit machine-readable CSV instead of the table.
    #[arg(long)]
    csv: bool,
    /// Also run the instrumented kernels and compare the counted MACs
    /// against the closed forms (shape must be small enough to execute).
    #[arg(long)]
    crosscheck: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    /// One of: tensor, tfm, srnl, nonlocal, ca, model.
    #[arg(long)]
    module: String,
    /// Acceptance threshold for the worst relative error (defaults depend
    /// on the module: 1e-6 for tensor ops, 1e-5 for blocks, 1e-4 model).
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ParamsArgs {
    /// Optional key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scale override.
    #[arg(long)]
    scale: Option<usize>,
    /// Use the Base ablation variant (all modules replaced).
    #[arg(long)]
    base: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli
        .threads
        .or_else(|| {
            std::env::var("TFMAN_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(0);
    if threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(1);
        }
    }

    let result = match cli.command {
        Command::Degrade(a) => commands::degrade(a),
        Command::Train(a) => commands::train(a),
        Command::Infer(a) => commands::infer(a),
        Command::Eval(a) => commands::eval(a),
        Command::Cost(a) => commands::cost(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Params(a) => commands::params(a),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            // Usage and configuration mistakes exit 2, internal failures 1.
            let usage = err.downcast_ref::<tfman_core::Error>().map(|e| {
                matches!(
                    e,
                    tfman_core::Error::Usage(_) | tfman_core::Error::Config(_)
                )
            });
            ExitCode::from(if usage == Some(true) { 2 } else { 1 })
        }
    }
}

pub(crate) use {
    CostArgs as Cost, DegradeArgs as Degrade, EvalArgs as Eval, GradcheckArgs as Gradcheck,
    InferArgs as Infer, ParamsArgs as Params, TrainArgs as Train,
};
