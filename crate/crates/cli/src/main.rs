//! `doclm`: corpus tooling, training, generation, evaluation and rendering.
//!
//! Exit codes: 0 success, 2 configuration or input, 3 ingestion,
//! 4 training, 5 generation, 6 evaluation.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_INGEST: u8 = 3;
pub const EXIT_TRAIN: u8 = 4;
pub const EXIT_GENERATE: u8 = 5;
pub const EXIT_EVAL: u8 = 6;

/// An error tagged with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub error: anyhow::Error,
}

pub type CliResult<T> = Result<T, CliError>;

/// Attaches an exit code to any error.
pub trait WithCode<T> {
    fn code(self, code: u8) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> WithCode<T> for Result<T, E> {
    fn code(self, code: u8) -> CliResult<T> {
        self.map_err(|e| CliError { code, error: e.into() })
    }
}

#[derive(Parser)]
#[command(name = "doclm", version, about = "Autoregressive document layout and text generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic JSONL corpus.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Convert COCO layout annotations (plus optional text sidecar) to JSONL.
    Ingest {
        #[arg(long)]
        coco: PathBuf,
        #[arg(long)]
        sidecar: Option<PathBuf>,
        /// JSON object from COCO category id to category name; PubLayNet ids by default.
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the codec description and vocabulary layout as JSON.
    Vocab {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a JSONL corpus.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out_checkpoint: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override `train.total_steps`.
        #[arg(long)]
        steps: Option<u64>,
        /// Metrics log path; defaults to `<out-checkpoint>.metrics.jsonl`.
        #[arg(long)]
        metrics_log: Option<PathBuf>,
        /// Strict corpus parsing: abort on the first malformed line.
        #[arg(long)]
        strict: bool,
    },
    /// Complete documents from their first k elements.
    Complete {
        #[command(flatten)]
        gen: GenArgs,
        /// Number of leading elements kept, or `half`.
        #[arg(long, default_value = "half")]
        k: String,
    },
    /// Regenerate text boxes with their categories fixed.
    Place {
        #[command(flatten)]
        gen: GenArgs,
        /// Comma-separated element indices; every text element (multiple)
        /// or the first in reading order (single) when omitted.
        #[arg(long, value_delimiter = ',')]
        targets: Option<Vec<usize>>,
        #[arg(long, value_enum, default_value = "single")]
        mode: Mode,
    },
    /// Score generated documents against references.
    Eval {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long, value_enum)]
        task: EvalTaskArg,
        #[arg(long, value_enum, default_value = "single")]
        mode: Mode,
        #[arg(long, value_delimiter = ',')]
        targets: Option<Vec<usize>>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render one document record to SVG.
    Render {
        #[arg(long)]
        doc: PathBuf,
        /// Record id; the first record when omitted.
        #[arg(long)]
        id: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        show_text: bool,
    },
}

#[derive(Args)]
pub struct GenArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// JSONL file of input documents.
    #[arg(long)]
    pub doc: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub top_p: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_new_tokens: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Mode {
    Single,
    Multiple,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum EvalTaskArg {
    Completion,
    Placement,
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth { config, out, seed, n } => commands::synth(config.as_deref(), &out, seed, n),
        Command::Ingest {
            coco,
            sidecar,
            map,
            config,
            out,
        } => commands::ingest(&coco, sidecar.as_deref(), map.as_deref(), config.as_deref(), &out),
        Command::Vocab { config, out } => commands::vocab(config.as_deref(), &out),
        Command::Train {
            config,
            corpus,
            out_checkpoint,
            resume,
            steps,
            metrics_log,
            strict,
        } => commands::train(commands::TrainArgs {
            config,
            corpus,
            out_checkpoint,
            resume,
            steps,
            metrics_log,
            strict,
        }),
        Command::Complete { gen, k } => commands::complete(&gen, &k),
        Command::Place { gen, targets, mode } => commands::place(&gen, targets, mode),
        Command::Eval {
            generated,
            reference,
            task,
            mode,
            targets,
            config,
            out,
        } => commands::eval(&generated, &reference, task, mode, targets, config.as_deref(), &out),
        Command::Render {
            doc,
            id,
            config,
            out,
            show_text,
        } => commands::render(&doc, id.as_deref(), config.as_deref(), &out, show_text),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            ExitCode::from(e.code)
        }
    }
}
