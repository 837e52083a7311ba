//! The `emphscore` command line: dataset generation, classifier training,
//! batch evaluation and single-utterance inspection.
//!
//! Exit codes: 0 success, 1 invalid flags or data, 2 internal or write failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use emphscore_core::Error;

mod commands;
mod config;

pub use config::Overlay;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "emphscore", version, about = "Score how well speech outputs carry over word emphasis")]
pub struct Cli {
    /// File of key=value defaults; explicit flags win.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Lowest F0 the pitch tracker searches, in Hz.
    #[arg(long, global = true)]
    pub f0_min: Option<f64>,
    /// Highest F0 the pitch tracker searches, in Hz.
    #[arg(long, global = true)]
    pub f0_max: Option<f64>,
    /// YIN voicing threshold.
    #[arg(long, global = true)]
    pub yin_threshold: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with known emphasis.
    GenData(GenDataArgs),
    /// Train the frame classifier on a manifest.
    Train(TrainArgs),
    /// Score outputs against a manifest and write a JSON report.
    Evaluate(EvaluateArgs),
    /// Run a model over one WAV file.
    Classify(ClassifyArgs),
    /// Print word links for one sentence pair.
    Align(AlignArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Number of distinct transcripts; each is rendered in all four voices.
    #[arg(long)]
    pub n: Option<usize>,
    /// Size of the built-in vocabulary, or a file of whitespace-separated tokens.
    #[arg(long, value_name = "N|PATH")]
    pub vocab: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Also write simulated-language outputs and a parallel corpus, using this seed.
    #[arg(long, value_name = "SEED")]
    pub sim_lang: Option<u64>,
    /// Parallel corpus size written with --sim-lang.
    #[arg(long)]
    pub parallel_lines: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub model_out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub l2: Option<f64>,
    /// Shuffle seed; only used with --mini-batch.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Shuffled mini-batches of 256 frames instead of full-batch descent.
    #[arg(long)]
    pub mini_batch: bool,
    /// Write the per-epoch training loss, one value per line.
    #[arg(long, value_name = "PATH")]
    pub loss_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub outputs: PathBuf,
    /// Trained classifier file.
    #[arg(long, conflicts_with = "oracle", required_unless_present = "oracle")]
    pub model: Option<PathBuf>,
    /// Read true emphasis from the outputs' label sidecars instead of a model.
    #[arg(long)]
    pub oracle: bool,
    /// identity, chargram, lexicon:PATH or external:PATH.
    #[arg(long)]
    pub aligner: Option<String>,
    #[arg(long)]
    pub report_out: PathBuf,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Stop at the first failing utterance instead of skipping it.
    #[arg(long)]
    pub fail_fast: bool,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub wav: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Word label file (start, end, token per line) for per-word decisions.
    #[arg(long)]
    pub spans: Option<PathBuf>,
    /// Write the feature matrix as TSV.
    #[arg(long, value_name = "PATH")]
    pub dump_features: Option<PathBuf>,
    /// Print every frame's probability.
    #[arg(long)]
    pub frames: bool,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    /// Source sentence, whitespace-tokenized.
    #[arg(long)]
    pub src: String,
    /// Target sentence, whitespace-tokenized.
    #[arg(long)]
    pub tgt: String,
    /// identity, chargram, lexicon:PATH or external:PATH.
    #[arg(long)]
    pub aligner: Option<String>,
    /// Pair id looked up in an external score file.
    #[arg(long, default_value = "pair")]
    pub pair_id: String,
    /// Write the lexicon used (e.g. one trained from a parallel corpus).
    #[arg(long, value_name = "PATH")]
    pub lexicon_out: Option<PathBuf>,
}

/// A command failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn invalid(message: impl Into<String>) -> Self {
        Failure { code: EXIT_INVALID, message: message.into() }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Failure { code: EXIT_INTERNAL, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) => Failure::internal(e.to_string()),
            other => Failure::invalid(other.to_string()),
        }
    }
}

/// Parses `args` (program name first) and runs the command. Human-readable
/// output goes to `out`, warnings and errors to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    EXIT_INVALID
                }
            };
        }
    };
    match commands::dispatch(&cli, err) {
        Ok(text) => match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
            Ok(()) => EXIT_OK,
            Err(e) => {
                let _ = writeln!(err, "error: cannot write output: {e}");
                EXIT_INTERNAL
            }
        },
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}
