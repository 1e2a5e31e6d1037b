mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::LevelFilter;
use thiserror::Error;

use tinyecg::nn::Variant;
use tinyecg::quant::QuantMode;
use tinyecg::train::{BatchMode, TrainConfig};

const EXIT_OTHER: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_PARSE: u8 = 3;
const EXIT_CHECKSUM: u8 = 4;
const EXIT_BUDGET: u8 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] tinyecg::Error),
    #[error("{0}")]
    Usage(String),
    #[error("deployment needs {total} bytes of SRAM, budget is {budget}")]
    OverBudget { total: usize, budget: usize },
    #[error("cannot write report: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use tinyecg::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::OverBudget { .. } => EXIT_BUDGET,
            CliError::Core(E::Parse { .. } | E::Format(_)) => EXIT_PARSE,
            CliError::Core(E::Checksum { .. }) => EXIT_CHECKSUM,
            CliError::Core(_) | CliError::Json(_) => EXIT_OTHER,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "tinyecg", version, about = "Arrhythmia classification for microcontroller-sized models")]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    /// Only print errors.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    quiet: bool,

    /// Print reports as JSON instead of tables.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cut labeled beats out of signal/annotation exports.
    Ingest(IngestArgs),
    /// Train a 61-10-4 network.
    Train(TrainArgs),
    /// Quantize a float model to int8 and print its deployment cost.
    Quantize(QuantizeArgs),
    /// Score a model on a labeled beat file.
    Eval(EvalArgs),
    /// Replay a signal through QRS detection and classification.
    Stream(StreamArgs),
    /// Cost report plus a comparison of the three inference modes.
    Report(ReportArgs),
    /// Write a synthetic ECG record.
    Synth(SynthArgs),
    /// Pruning, distillation and weights-only ablations.
    Compress(CompressArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Signal CSV (`index,value`); repeat together with --annotations.
    #[arg(long = "signal", required = true)]
    pub signals: Vec<PathBuf>,
    /// Annotation CSV (`sample_index,symbol`), one per --signal.
    #[arg(long = "annotations", required = true)]
    pub annotations: Vec<PathBuf>,
    /// Output beat file with every extracted beat.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub train_out: Option<PathBuf>,
    #[arg(long)]
    pub test_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.67)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = tinyecg::ingest::MITBIH_RATE_HZ)]
    pub sampling_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    SigmoidSigmoid,
    ReluSigmoid,
    ReluSoftmax,
    SigmoidSoftmax,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::SigmoidSigmoid => Variant::SigmoidSigmoid,
            VariantArg::ReluSigmoid => Variant::ReluSigmoid,
            VariantArg::ReluSoftmax => Variant::ReluSoftmax,
            VariantArg::SigmoidSoftmax => Variant::SigmoidSoftmax,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BatchModeArg {
    SingleStep,
    FullPass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Symmetric,
    Asymmetric,
}

impl From<ModeArg> for QuantMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Symmetric => QuantMode::Symmetric,
            ModeArg::Asymmetric => QuantMode::Asymmetric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InferenceMode {
    Default,
    Quantized,
    TemporaryDequantized,
}

/// Optimizer flags shared by `train` and `compress`.
#[derive(Debug, Args)]
pub struct OptimArgs {
    #[arg(long, value_enum, default_value = "sigmoid-sigmoid")]
    pub variant: VariantArg,
    #[arg(long, default_value_t = 10_000)]
    pub epochs: usize,
    #[arg(long = "lr", default_value_t = 0.001)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 1024)]
    pub batch_size: usize,
    #[arg(long, value_enum, default_value = "single-step")]
    pub batch_mode: BatchModeArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Run batch work on one thread.
    #[arg(long)]
    pub sequential: bool,
}

impl OptimArgs {
    pub fn config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            seed: self.seed,
            variant: self.variant.into(),
            batch_mode: match self.batch_mode {
                BatchModeArg::SingleStep => BatchMode::SingleStep,
                BatchModeArg::FullPass => BatchMode::FullPass,
            },
            execution: if self.sequential {
                tinyecg::par::Execution::Sequential
            } else {
                tinyecg::par::Execution::Parallel
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Labeled training beat file.
    #[arg(long)]
    pub beats: PathBuf,
    /// Optional held-out beat file scored after training.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Model output (`.json` for JSON, anything else for binary).
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch `epoch,loss` trace.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub optim: OptimArgs,
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "symmetric")]
    pub mode: ModeArg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Float or quantized model file.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub beats: PathBuf,
    #[arg(long, value_enum, default_value = "default")]
    pub inference_mode: InferenceMode,
    /// Also write the report as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StreamArgs {
    #[arg(long)]
    pub signal: PathBuf,
    /// Quantized model; a float model is quantized symmetrically first.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = tinyecg::ingest::MITBIH_RATE_HZ)]
    pub sampling_rate: f64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Labeled beats for the inference-mode comparison.
    #[arg(long)]
    pub beats: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub signal_out: PathBuf,
    #[arg(long)]
    pub annotations_out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub beats: usize,
    #[arg(long, default_value_t = 75.0)]
    pub bpm: f64,
    /// Noise level; omit with --clean.
    #[arg(long, default_value_t = 30.0)]
    pub snr: f64,
    /// No noise and no baseline wander.
    #[arg(long)]
    pub clean: bool,
    /// Relative N,S,V,F frequencies.
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 0.0, 0.0, 0.0])]
    pub weights: Vec<f64>,
    /// Identical Gaussian pulses instead of beat morphologies.
    #[arg(long)]
    pub pulses: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Prune,
    Distill,
    WeightsOnly,
}

#[derive(Debug, Args)]
pub struct CompressArgs {
    #[arg(long, value_enum)]
    pub method: Method,
    #[arg(long)]
    pub beats: PathBuf,
    /// Base model to prune, or teacher to distill; unused for weights-only.
    #[arg(long, required_if_eq_any = [("method", "prune"), ("method", "distill")])]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Student hidden width for distillation.
    #[arg(long, default_value_t = 4)]
    pub hidden: usize,
    #[command(flatten)]
    pub optim: OptimArgs,
}

fn init_logging(cli: &Cli) {
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => LevelFilter::Error,
        (false, 0) => LevelFilter::Warn,
        (false, 1) => LevelFilter::Info,
        (false, 2) => LevelFilter::Debug,
        _ => LevelFilter::Trace,
    };
    // Builder::new rather than from_env: the CLI reads no environment.
    env_logger::Builder::new().filter_level(level).format_target(false).init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(&cli);
    let json = cli.json;
    let result = match cli.command {
        Command::Ingest(a) => commands::ingest(&a, json),
        Command::Train(a) => commands::train(&a, json),
        Command::Quantize(a) => commands::quantize(&a, json),
        Command::Eval(a) => commands::eval(&a, json),
        Command::Stream(a) => commands::stream(&a),
        Command::Report(a) => commands::report(&a, json),
        Command::Synth(a) => commands::synth(&a),
        Command::Compress(a) => commands::compress(&a, json),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
