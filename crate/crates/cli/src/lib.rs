//! Command-line driver: corpus generation, classifier and GAN training,
//! generation, evaluation, blending and plotting.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
pub mod export;
pub mod manifest;
pub mod plot;

pub use manifest::RunManifest;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] vispgan::Error),
    #[error("{0}")]
    Usage(String),
    #[error("plotting failed: {0}")]
    Plot(String),
}

impl CliError {
    /// 1 for bad input or configuration, 2 for failures inside a run.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if !e.is_user_error() => 2,
            CliError::Plot(_) => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub const DATA_DIR_ENV: &str = "VISPGAN_DATA_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "vispgan",
    version,
    about = "Character-conditioned video-to-video translation"
)]
pub struct Cli {
    /// Root for default input and output paths.
    #[arg(long, global = true, env = DATA_DIR_ENV, default_value = "vispgan-data")]
    pub data_dir: PathBuf,
    /// Log only warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic corpus of word clips.
    MakeCorpus(MakeCorpusArgs),
    /// Train the word classifier used as a frozen critic head.
    PretrainCls(ClassifierArgs),
    /// Train a translation GAN.
    Train(TrainArgs),
    /// Train the auxiliary evaluation classifier on its disjoint split.
    TrainAux(ClassifierArgs),
    /// Translate one clip to a target word.
    Generate(GenerateArgs),
    /// Score generators by auxiliary-classifier accuracy and FID.
    Evaluate(EvaluateArgs),
    /// Composite a generated clip into the original with Poisson blending.
    Blend(BlendArgs),
    /// Render metric curves and evaluation bars as SVG.
    Plot(PlotArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Small networks and rates sized for the desk corpus.
    Desk,
    /// Full-size networks and published rates.
    Paper,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// Character-conditioned generator with inspector and feature matching.
    Vispgan,
    /// Word-conditioned baseline.
    Stargan3d,
}

impl From<ModeArg> for vispgan::losses::Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Vispgan => vispgan::losses::Mode::Vispgan,
            ModeArg::Stargan3d => vispgan::losses::Mode::Stargan3d,
        }
    }
}

#[derive(Debug, Args)]
pub struct MakeCorpusArgs {
    /// Corpus config JSON; the desk corpus when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed for speakers and noise.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Standard deviation of the additive pixel noise.
    #[arg(long)]
    pub noise_sigma: Option<f32>,
    /// Output directory [default: <data-dir>/corpus].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClassifierArgs {
    /// Corpus directory [default: <data-dir>/corpus].
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Classifier training config JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Defaults used when no config file is given.
    #[arg(long, value_enum, default_value = "desk")]
    pub preset: Preset,
    /// Number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Seed for initialization, shuffling and augmentation.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Base learning rate.
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Minibatch size.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Checkpoint path [default: <data-dir>/classifier.vsck or aux.vsck].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Metrics CSV path [default: next to the checkpoint].
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Conditioning mode [default: from the config file, else vispgan].
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Corpus directory [default: <data-dir>/corpus].
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Word classifier checkpoint [default: <data-dir>/classifier.vsck].
    #[arg(long)]
    pub classifier: Option<PathBuf>,
    /// GAN training config JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Defaults used when no config file is given.
    #[arg(long, value_enum, default_value = "desk")]
    pub preset: Preset,
    /// Number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// First epoch of the linear learning-rate decay [default: half the epochs when --epochs is set].
    #[arg(long)]
    pub decay_start_epoch: Option<usize>,
    /// Seed for initialization, shuffling and sampling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Base learning rate.
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Minibatch size.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Critic updates per generator update.
    #[arg(long)]
    pub n_critic: Option<usize>,
    /// Run directory for checkpoint and metrics [default: <data-dir>/gan-<mode>].
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Continue from the run directory's last checkpoint.
    #[arg(long)]
    pub resume: bool,
    /// Stop once this many epochs are complete.
    #[arg(long)]
    pub stop_after_epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// GAN checkpoint [default: <data-dir>/gan-vispgan/gan_last.vsck].
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Source clip (VSGC).
    #[arg(long)]
    pub input: PathBuf,
    /// Target word from the training vocabulary.
    #[arg(long)]
    pub word: String,
    /// Output clip (VSGC).
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for per-frame PPM/PGM images.
    #[arg(long)]
    pub export: Option<PathBuf>,
    /// Auxiliary classifier used to report the word read from the output.
    #[arg(long)]
    pub aux: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Corpus directory [default: <data-dir>/corpus].
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Auxiliary classifier checkpoint [default: <data-dir>/aux.vsck].
    #[arg(long)]
    pub aux: Option<PathBuf>,
    /// GAN checkpoint to score; repeatable [default: the last checkpoint of each mode under <data-dir>].
    #[arg(long)]
    pub checkpoint: Vec<PathBuf>,
    /// Fake-generation protocol JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Fakes generated per target word.
    #[arg(long)]
    pub per_target: Option<usize>,
    /// Seed for source sampling and bootstrap resampling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Generator batch size.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Report path [default: <data-dir>/report.json].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BlendArgs {
    /// Original clip (VSGC).
    #[arg(long)]
    pub original: PathBuf,
    /// Generated clip (VSGC) of the same shape.
    #[arg(long)]
    pub generated: PathBuf,
    /// JSON sidecar mapping frame index to [top, left, height, width].
    #[arg(long)]
    pub regions: PathBuf,
    /// Output clip (VSGC).
    #[arg(long)]
    pub out: PathBuf,
    /// Residual tolerance of the linear solve.
    #[arg(long, default_value_t = vispgan::blend::DEFAULT_TOL)]
    pub tol: f64,
    /// Directory for per-frame PPM/PGM images.
    #[arg(long)]
    pub export: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Metrics CSV written by a training command.
    #[arg(long)]
    pub metrics: PathBuf,
    /// Columns to plot, comma separated [default: every loss column].
    #[arg(long, value_delimiter = ',')]
    pub columns: Option<Vec<String>>,
    /// Evaluation report for the accuracy and FID bar chart.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Output directory [default: <data-dir>/plots].
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Parses `argv`, runs the command, and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
    let argv: Vec<String> = argv
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    match commands::dispatch(&cli, &argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
