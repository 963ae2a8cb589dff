use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

/// Human-baselined reliability requirements for image classifiers.
///
/// Exit codes: 0 success, 1 domain error, 2 usage error, 3 requirement
/// violated (`check`) or runs disagree (`convergence`).
#[derive(Debug, Parser)]
#[command(name = "visreq", version)]
struct Cli {
    /// JSON config: viewing_conditions, frost_texture_dir, work_dir,
    /// default_r, default_alpha, default_q, default_n, default_k. All keys
    /// optional.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads [default: available parallelism].
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Visual change between an original and a transformed image.
    Deltav(DeltavArgs),
    /// Apply one transformation to an image.
    Transform(TransformArgs),
    /// Generate transformed stimulus pairs and write a pairs manifest.
    GenPairs(GenPairsArgs),
    /// Simulate human trials on a pairs manifest.
    SimulateHumans(SimulateArgs),
    /// Estimate a threshold from trial data and write a requirements file.
    Estimate(EstimateArgs),
    /// Test whether the smoothed curves of two trial sets overlap.
    CompareSplines(CompareArgs),
    /// Check a model against a requirement.
    Check(CheckArgs),
    /// Run the check under two seeds and compare the estimates.
    Convergence(ConvergenceArgs),
}

#[derive(Debug, Args)]
struct DeltavArgs {
    #[arg(long)]
    original: PathBuf,
    #[arg(long)]
    transformed: PathBuf,
    /// Print the score as a JSON object instead of text lines.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct TransformArgs {
    #[arg(long)]
    input: PathBuf,
    /// Output image; `.jpg`/`.jpeg` writes JPEG, anything else PNG.
    #[arg(long)]
    output: PathBuf,
    /// One of rgb_shift, contrast, defocus_blur, brightness, frost,
    /// color_jitter, jpeg_compression, gaussian_noise.
    #[arg(long)]
    transformation: String,
    /// Parameter values as a JSON object, e.g. '{"sigma":0.1}'. Sampled
    /// uniformly from the domains when omitted.
    #[arg(long)]
    params: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["originals", "synthetic"]))]
struct GenPairsArgs {
    /// Directory of PNG/JPEG originals, or a `path,ground_truth` CSV.
    #[arg(long)]
    originals: Option<PathBuf>,
    /// Use this many procedurally generated originals instead.
    #[arg(long)]
    synthetic: Option<usize>,
    /// Side length of synthetic originals.
    #[arg(long, default_value_t = 64)]
    side: u32,
    #[arg(long)]
    transformation: String,
    #[arg(long, default_value_t = 1000)]
    count: usize,
    /// Output directory; receives pairs.csv and pairs/*.png.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Pairs manifest CSV: pair_id,original_path,transformed_path,
    /// transformation,params_json,seed,delta_v.
    #[arg(long)]
    pairs: PathBuf,
    /// Trials CSV to write: trial_id,pair_id,shown,subject_id,response,ground_truth.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.97)]
    base_accuracy: f64,
    #[arg(long, default_value_t = 0.6)]
    floor_accuracy: f64,
    #[arg(long, default_value_t = 0.6)]
    drop_at: f64,
    #[arg(long, default_value_t = 40.0)]
    slope: f64,
    /// Responses per image and role.
    #[arg(long, default_value_t = 5)]
    subjects: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct TrialInput {
    /// Trials CSV: trial_id,pair_id,shown,subject_id,response,ground_truth.
    #[arg(long)]
    trials: PathBuf,
    /// Pairs manifest CSV with delta_v filled in.
    #[arg(long)]
    pairs: PathBuf,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[command(flatten)]
    input: TrialInput,
    /// correctness or prediction.
    #[arg(long, default_value = "correctness")]
    kind: String,
    /// Interval count r [default: config default_r or 20].
    #[arg(long)]
    intervals: Option<usize>,
    /// Significance level [default: config default_alpha or 0.05].
    #[arg(long)]
    alpha: Option<f64>,
    /// Quantile defining epsilon [default: config default_q or 0.05].
    #[arg(long)]
    q: Option<f64>,
    /// Bootstrap resamples for the confidence band; 0 disables it.
    #[arg(long, default_value_t = 200)]
    bootstrap: usize,
    #[arg(long, default_value_t = 0.83)]
    confidence: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Task label stored in the requirements file.
    #[arg(long, default_value = "classification")]
    task: String,
    /// Requirements JSON; an existing file for the same task is updated.
    #[arg(long)]
    out: PathBuf,
    /// Per-interval CSV: index,lower,upper,n,successes,rate,smoothed_rate,p_value.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[arg(long)]
    trials_a: PathBuf,
    #[arg(long)]
    pairs_a: PathBuf,
    #[arg(long)]
    trials_b: PathBuf,
    #[arg(long)]
    pairs_b: PathBuf,
    #[arg(long, default_value = "correctness")]
    kind: String,
    #[arg(long, default_value_t = 0.83)]
    confidence: f64,
    #[arg(long)]
    intervals: Option<usize>,
    #[arg(long, default_value_t = 200)]
    bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the overlap report, including both bands, as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("model").required(true).args(["model_cmd", "model_builtin"]))]
struct CheckInput {
    /// Requirements JSON as written by `estimate`.
    #[arg(long)]
    requirements: PathBuf,
    /// Selects the entry when the file holds several.
    #[arg(long)]
    transformation: Option<String>,
    /// Selects the entry when the file holds several.
    #[arg(long)]
    kind: Option<String>,
    /// Overrides or supplies epsilon for prediction requirements.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Dataset CSV with columns path,ground_truth (pos|neg).
    #[arg(long)]
    dataset: PathBuf,
    /// Shell command of a model adapter speaking the JSON-lines protocol:
    /// requests {"id","path"}, replies {"id","label":"pos"|"neg"} or {"id","error"}.
    #[arg(long)]
    model_cmd: Option<String>,
    /// oracle, constant_positive or degrading(drop=D,at=A).
    #[arg(long)]
    model_builtin: Option<String>,
    /// Per-batch timeout for adapter replies, in seconds.
    #[arg(long, default_value_t = 60)]
    timeout: u64,
    /// Batches [default: config default_n or 200].
    #[arg(long)]
    n: Option<usize>,
    /// Images per batch [default: config default_k or 50].
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Balance accepted cases across five equal visual-change strata.
    #[arg(long)]
    stratified: bool,
    /// Where transformed images are written [default: config work_dir, or
    /// <out dir>/work when a model command is used].
    #[arg(long)]
    work_dir: Option<PathBuf>,
    /// Visual-change cache CSV, read if present and rewritten afterwards.
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[command(flatten)]
    input: CheckInput,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report JSON; per-batch values go to the same path with a .csv extension.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ConvergenceArgs {
    #[command(flatten)]
    input: CheckInput,
    /// The two seeds, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2])]
    seeds: Vec<u64>,
    /// Convergence report JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code_for(&e))
        }
    }
}
