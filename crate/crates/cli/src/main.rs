//! `hada`: generate synthetic stores, train, evaluate, embed and compare.

mod commands;
mod config;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Hada(#[from] hada::Error),
}

impl CliError {
    /// 3 for numerical failures, 2 for everything the user can fix.
    pub fn exit_code(&self) -> u8 {
        use hada::numerics::NumericsError;
        match self {
            CliError::Hada(hada::Error::NonFiniteLoss { .. })
            | CliError::Hada(hada::Error::Numerics(NumericsError::NonFiniteGradient { .. })) => 3,
            _ => 2,
        }
    }
}

impl From<hada::featstore::StoreError> for CliError {
    fn from(e: hada::featstore::StoreError) -> Self {
        CliError::Hada(e.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Hada(e.into())
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "hada",
    version,
    about = "Graph-based fusion of frozen encoder features for image-text retrieval"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Run configuration (JSON); flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Feature store directory.
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated upstream model ids to fuse.
    #[arg(long, value_delimiter = ',')]
    pub models: Option<Vec<String>>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic feature store with train/val/test labels.
    GenSynth(GenSynthArgs),
    /// Train one phase and write the best checkpoint plus a JSONL log.
    Train(TrainArgs),
    /// Evaluate retrieval on one split and write a JSON report.
    Eval(EvalArgs),
    /// Dump unit embeddings as a feature store (CLS row = global = embedding).
    Embed(EmbedArgs),
    /// Evaluate single models, B1, B2 and HADA side by side.
    Compare(CompareArgs),
}

#[derive(Args, Debug)]
pub struct GenSynthArgs {
    #[command(flatten)]
    pub common: Common,
    /// Number of image items.
    #[arg(long)]
    pub items: Option<usize>,
    #[arg(long)]
    pub texts_per_image: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    /// Train,val,test fractions.
    #[arg(long, value_delimiter = ',')]
    pub split: Option<Vec<f64>>,
    /// Store directory to write (overrides `store`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Hada,
    B2,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=2))]
    pub phase: u32,
    /// Checkpoint to start from; required for phase 2.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr_max: Option<f64>,
    #[arg(long)]
    pub lr_min: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Omit wall-clock seconds from the log.
    #[arg(long)]
    pub deterministic_log: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Fused,
    Weighted,
    B2,
    Single,
    B1,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Upstream model for `--mode single`.
    #[arg(long)]
    pub model: Option<String>,
    /// B1 inputs: checkpoints or single models.
    #[arg(long)]
    pub ckpt_a: Option<PathBuf>,
    #[arg(long)]
    pub ckpt_b: Option<PathBuf>,
    #[arg(long)]
    pub model_a: Option<String>,
    #[arg(long)]
    pub model_b: Option<String>,
    #[arg(long)]
    pub split: Option<hada::featstore::Split>,
    /// Report path (defaults to `<out_dir>/report.json` when set).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    /// Only items of this split; all items otherwise.
    #[arg(long)]
    pub split: Option<hada::featstore::Split>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: Common,
    /// HADA checkpoint.
    #[arg(long)]
    pub hada: PathBuf,
    /// B2 checkpoint.
    #[arg(long)]
    pub b2: Option<PathBuf>,
    /// Row that ΔR is measured against (default: the anchor model).
    #[arg(long)]
    pub reference: Option<String>,
    #[arg(long)]
    pub split: Option<hada::featstore::Split>,
    /// JSON table output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenSynth(a) => commands::gen_synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Embed(a) => commands::embed(a),
        Command::Compare(a) => commands::compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
