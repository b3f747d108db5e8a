//! `clnas`: architecture search for continual learning from the command line.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod output;

/// A configuration or usage problem; exits with code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "clnas", version, about = "Evolutionary architecture search for continual learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic ACDS1 dataset.
    GenData(GenDataArgs),
    /// Print the architecture a genotype decodes to.
    Decode(DecodeArgs),
    /// Train one genotype through the task sequence and report its metrics.
    Eval(EvalArgs),
    /// Run the evolutionary search.
    Search(SearchArgs),
    /// Run a component or scaling study.
    Grid(GridArgs),
    /// Compare representations of per-stage checkpoints with linear CKA.
    Cka(CkaArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ScenarioArg {
    TaskIl,
    ClassIl,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum DownsampleArg {
    MaxPool,
    AvgPool,
    StridedConv,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum GridKind {
    Components,
    Scaling,
}

#[derive(Args, Debug, Default)]
pub struct ComponentFlags {
    #[arg(long, value_enum)]
    pub downsample: Option<DownsampleArg>,
    /// Residual connections around units.
    #[arg(long)]
    pub skip: Option<bool>,
    /// Global average pooling before the classifier.
    #[arg(long)]
    pub gap: Option<bool>,
    /// Width of a 1x1 convolution inserted before the classifier.
    #[arg(long)]
    pub pre_classifier: Option<usize>,
}

#[derive(Args, Debug)]
pub struct CommonArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// ACDS1 dataset.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Directory for run outputs.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Concurrent runs; 0 uses every core.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, value_enum)]
    pub scenario: Option<ScenarioArg>,
    /// Replay buffer capacity (class-il).
    #[arg(long)]
    pub buffer: Option<usize>,
    /// Number of tasks the classes are split into.
    #[arg(long)]
    pub tasks: Option<usize>,
    #[arg(long)]
    pub epochs_first: Option<usize>,
    #[arg(long)]
    pub epochs_rest: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub param_limit: Option<usize>,
    #[command(flatten)]
    pub component: ComponentFlags,
    /// Discard existing outputs for this configuration.
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    /// Training examples per class.
    #[arg(long, default_value_t = 20)]
    pub train: usize,
    /// Test examples per class.
    #[arg(long, default_value_t = 10)]
    pub test: usize,
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    #[arg(long, default_value_t = 0.3)]
    pub noise: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    pub genotype: String,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub scenario: Option<ScenarioArg>,
    #[command(flatten)]
    pub component: ComponentFlags,
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    /// Also print the genotype scaled down to this many parameters.
    #[arg(long)]
    pub param_limit: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    pub genotype: String,
    #[command(flatten)]
    pub common: CommonArgs,
    /// Number of training seeds, starting at the master seed.
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    /// Save one checkpoint per incremental stage here.
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "f32")]
    pub precision: Precision,
}

#[derive(Args, Debug)]
pub struct SearchArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Use the analytic test landscape instead of training.
    #[arg(long)]
    pub surrogate: bool,
    #[arg(long)]
    pub population: Option<usize>,
    #[arg(long)]
    pub generations: Option<usize>,
    /// Continue an interrupted run from its history file.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Args, Debug)]
pub struct GridArgs {
    #[arg(value_enum)]
    pub kind: GridKind,
    #[command(flatten)]
    pub common: CommonArgs,
    /// Genotype supplying depth, width and location codes.
    #[arg(long)]
    pub skeleton: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub widths: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub depths: Option<Vec<usize>>,
    /// Classifier input width forced by a 1x1 convolution (scaling grid).
    #[arg(long)]
    pub final_width: Option<usize>,
    /// Training seeds per cell.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Skip cells already present in the records file.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Args, Debug)]
pub struct CkaArgs {
    /// Directory of ACNN1 checkpoints.
    #[arg(long)]
    pub checkpoint_dir: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub probe_seed: u64,
    #[arg(long, default_value_t = clnas::analysis::PROBE_SIZE)]
    pub probe_size: usize,
    /// CSV destination; standard output when absent.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<clnas::Error>() {
        Some(
            clnas::Error::Parse(_)
            | clnas::Error::Config(_)
            | clnas::Error::InvalidBounds(_)
            | clnas::Error::OutOfBounds(_)
            | clnas::Error::InfeasibleBudget { .. },
        ) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Decode(a) => commands::decode(a),
        Command::Eval(a) => commands::eval(a),
        Command::Search(a) => commands::search(a),
        Command::Grid(a) => commands::grid(a),
        Command::Cka(a) => commands::cka(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
