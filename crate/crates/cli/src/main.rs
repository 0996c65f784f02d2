mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Exit code for bad input: manifests, files, flags.
const EXIT_INVALID: u8 = 1;
/// Exit code for numerical failures: non-finite values, failed gradient checks.
const EXIT_NUMERIC: u8 = 2;

#[derive(Parser)]
#[command(
    name = "bida",
    version,
    about = "Temporally consistent stereo video toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene to a bundle on disk.
    Gen(GenArgs),
    /// Evaluate a prediction against ground truth.
    Metrics(MetricsArgs),
    /// Dump neighbor disparities and images warped onto each frame.
    Align(AlignArgs),
    /// Run the stereo network on a clip.
    Infer(InferArgs),
    /// Run the stabilizer on a clip's predictions.
    Stabilize(StabilizeArgs),
    /// Overfit a stabilizer to one clip.
    TrainToy(TrainArgs),
    /// Finite-difference check of the stabilizer gradients.
    Gradcheck(GradcheckArgs),
    /// Write an initial weight file.
    InitWeights(InitArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Scene description (JSON). Without it a two-layer scene is built from
    /// the size flags.
    #[arg(long, conflicts_with_all = ["seed", "height", "width", "frames"])]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 10)]
    frames: usize,
    #[arg(long)]
    out: PathBuf,
    /// Add Gaussian noise of this standard deviation (px) as prediction `pred`.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long, default_value_t = 0)]
    noise_seed: u64,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "pred")]
    pred_key: String,
    /// JSON report path.
    #[arg(long)]
    report: PathBuf,
    /// Per-frame and per-transition rows as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Directory of `pred_*.flo`/`gt_*.flo` flows for the motion metric
    /// instead of the built-in block matcher.
    #[arg(long)]
    flow_dir: Option<PathBuf>,
}

#[derive(Args)]
struct AlignArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Disparity sequence to align; `gt` selects the ground truth.
    #[arg(long, default_value = "gt")]
    key: String,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long, default_value_t = 20)]
    iters: usize,
    #[arg(long)]
    out: PathBuf,
    /// Prediction key of the outputs in the written manifest.
    #[arg(long, default_value = "infer")]
    key: String,
}

#[derive(Args)]
struct StabilizeArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Prediction to stabilize.
    #[arg(long, default_value = "pred")]
    pred_key: String,
    /// Prediction key of the outputs in the written manifest.
    #[arg(long, default_value = "stabilized")]
    key: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerKind {
    Sgd,
    Adamw,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "pred")]
    pred_key: String,
    #[arg(long, default_value_t = 500)]
    steps: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    #[arg(long, default_value_t = 0.2)]
    lambda: f64,
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
    #[arg(long, value_enum, default_value = "sgd")]
    optimizer: OptimizerKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Square crop side per step; 0 trains on whole frames.
    #[arg(long, default_value_t = 32)]
    crop: usize,
    /// Frames per step; 0 uses the whole clip.
    #[arg(long, default_value_t = 5)]
    window: usize,
    #[arg(long, default_value_t = 16)]
    width: usize,
    /// Standardize disparities inside the model.
    #[arg(long)]
    normalize: bool,
    /// Output weight file.
    #[arg(long)]
    out: PathBuf,
    /// Loss curve CSV; defaults to the weight path with a `.csv` extension.
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
    /// JSON dump of every probe.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Stereo,
    Stabilizer,
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightKind {
    Random,
    Zero,
    /// Hand-built matching weights (stereo only).
    Matching,
}

#[derive(Args)]
struct InitArgs {
    #[arg(long, value_enum)]
    model: ModelKind,
    #[arg(long, value_enum, default_value = "random")]
    kind: WeightKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Fit the matching gains to this clip before writing.
    #[arg(long)]
    fit: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    iters: usize,
    #[arg(long)]
    gain: Option<f32>,
    /// Sobel weights of the stride-16, 8 and 4 features.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    edge: Option<Vec<f32>>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numeric = err.chain().any(|cause| {
        cause
            .downcast_ref::<bida_core::Error>()
            .is_some_and(|e| e.is_numeric())
            || cause.downcast_ref::<commands::CheckFailed>().is_some()
    });
    if numeric {
        EXIT_NUMERIC
    } else {
        EXIT_INVALID
    }
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("BIDA_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| anyhow::anyhow!("BIDA_THREADS must be a non-negative integer, got `{raw}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_INVALID)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Metrics(a) => commands::metrics(a),
        Command::Align(a) => commands::align(a),
        Command::Infer(a) => commands::infer(a),
        Command::Stabilize(a) => commands::stabilize(a),
        Command::TrainToy(a) => commands::train_toy(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::InitWeights(a) => commands::init_weights(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
