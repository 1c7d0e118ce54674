use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use khd_core::format::TrajectoryFormat;
use khd_core::synthetic::NoiseSpace;
use khd_core::{Centering, Metric, MinorPolicy};

#[derive(Debug, Parser)]
#[command(
    name = "khd",
    version,
    about = "Koopman residual hallucination detector"
)]
pub struct Cli {
    /// JSON pipeline configuration; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory (created if missing).
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Drop trajectories (or score rows) with fewer tokens.
    #[arg(long, global = true)]
    pub min_length: Option<usize>,

    /// Trajectory format for files this run writes. Inputs are detected.
    #[arg(long, global = true, value_enum)]
    pub format: Option<FormatArg>,

    /// Report failures as one JSON object on stderr.
    #[arg(long, global = true)]
    pub json_errors: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Jsonl,
    Bin,
}

impl From<FormatArg> for TrajectoryFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Jsonl => TrajectoryFormat::Jsonl,
            FormatArg::Bin => TrajectoryFormat::Bin,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CenteringArg {
    Mean,
    None,
}

impl From<CenteringArg> for Centering {
    fn from(c: CenteringArg) -> Self {
        match c {
            CenteringArg::Mean => Centering::Mean,
            CenteringArg::None => Centering::None,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NoiseSpaceArg {
    Latent,
    Embedding,
}

impl From<NoiseSpaceArg> for NoiseSpace {
    fn from(n: NoiseSpaceArg) -> Self {
        match n {
            NoiseSpaceArg::Latent => NoiseSpace::Latent,
            NoiseSpaceArg::Embedding => NoiseSpace::Embedding,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the observable map and both operators; writes a model with eta = 0.
    Fit(FitArgs),
    /// Score trajectories with a model; writes a score report.
    Score(ScoreArgs),
    /// Choose eta on calibration data and rewrite it into the model.
    Calibrate(CalibrateArgs),
    /// Evaluate scores: ROC, AUC, AUC-PR, F1, balanced accuracy.
    Eval(EvalArgs),
    /// Score a dataset from another embedding space with this model's operators.
    Crosseval(CrossevalArgs),
    /// Generate a synthetic two-system benchmark.
    Synth(SynthArgs),
    /// Export per-token SVD mode magnitudes as CSV.
    Modes(ModesArgs),
}

#[derive(Debug, Args)]
pub struct FitOverrides {
    /// Target number of SVD modes.
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long, value_enum)]
    pub centering: Option<CenteringArg>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Fit-split trajectories.
    #[arg(long)]
    pub fit: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: FitOverrides,
    /// Cap on singular values kept in the pseudoinverse.
    #[arg(long)]
    pub rank_cap: Option<usize>,
    #[arg(long)]
    pub sv_rel_tol: Option<f64>,
    /// Number of leading modes the polynomial lift acts on.
    #[arg(long)]
    pub lift_subset: Option<usize>,
    #[arg(long)]
    pub lift_degree: Option<u32>,
    #[arg(long)]
    pub lift_constant: Option<bool>,
    /// Model path; defaults to <output>/model.khdm.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Trajectories to score; defaults to the configured test split.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Windows sidecar; listed trajectories are scored per window.
    #[arg(long)]
    pub windows: Option<PathBuf>,
    /// Report path; defaults to <output>/scores.jsonl.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Score report of the calibration samples.
    #[arg(long, conflicts_with = "input")]
    pub scores: Option<PathBuf>,
    /// Calibration trajectories, scored with the model first.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub metric: Option<Metric>,
    #[arg(long)]
    pub minor_policy: Option<MinorPolicy>,
    /// Where to write the calibrated model; defaults to rewriting --model.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Score report to evaluate.
    #[arg(long, conflicts_with = "input")]
    pub scores: Option<PathBuf>,
    /// Trajectories to score with --model, then evaluate.
    #[arg(long, requires = "model")]
    pub input: Option<PathBuf>,
    /// Supplies eta (and scores --input).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Explicit eta; overrides the model's.
    #[arg(long, allow_negative_numbers = true)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub minor_policy: Option<MinorPolicy>,
}

#[derive(Debug, Args)]
pub struct CrossevalArgs {
    /// Model whose operators and eta are transferred.
    #[arg(long)]
    pub model: PathBuf,
    /// Test trajectories from the target embedding space.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Model fitted in the target space; only its observable map is used.
    #[arg(
        long,
        conflicts_with = "target_fit",
        required_unless_present = "target_fit"
    )]
    pub target_model: Option<PathBuf>,
    /// Target-space fit data from which to build the observable map.
    #[arg(long)]
    pub target_fit: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: FitOverrides,
    #[arg(long)]
    pub minor_policy: Option<MinorPolicy>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub spectral_radius: Option<f64>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub min_len: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub n_per_class: Option<usize>,
    #[arg(long)]
    pub n_test_per_class: Option<usize>,
    #[arg(long)]
    pub overlap: Option<f64>,
    #[arg(long)]
    pub shared_dynamics: Option<f64>,
    #[arg(long, value_enum)]
    pub noise_space: Option<NoiseSpaceArg>,
    /// Also write mixed trajectories, e.g. `c:50,h:50`, with a windows sidecar.
    #[arg(long)]
    pub mixed: Option<String>,
    /// Number of mixed trajectories.
    #[arg(long, default_value_t = 1)]
    pub replicates: u64,
}

#[derive(Debug, Args)]
pub struct ModesArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Comma-separated mode indices.
    #[arg(long, value_delimiter = ',')]
    pub modes: Vec<usize>,
    /// CSV path; defaults to <output>/modes.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
