//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 when the input has diagnostics or a command
//! fails at run time, 2 on a usage error (bad arguments, unreadable input,
//! malformed config). Every subcommand takes `--seed`, and equal seeds give
//! byte-identical outputs.

mod commands;
mod conf;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use conf::KeyValues;

#[derive(Debug)]
pub enum CliError {
    /// Exit 2.
    Usage(String),
    /// Exit 1.
    Failed(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Failed(m) => m,
        }
    }
}

/// Runtime failures from the library are exit 1.
pub(crate) fn failed<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Failed(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "reel", version, about = "Script-to-keyframe toolkit", propagate_version = true)]
pub struct Cli {
    /// Seed for every random draw the command makes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a script and report diagnostics; silent when it is valid.
    Validate { script: PathBuf },
    /// Print the canonical form of a script.
    Canonicalize { script: PathBuf },
    /// Insert an Extension or Continuation marker into a script.
    Split(SplitArgs),
    /// Write the attention mask and layout for generating one keyframe.
    Mask(MaskArgs),
    /// Synthetic corpus commands.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Train from a config file.
    Train(TrainArgs),
    /// Generate a script and its keyframes from a checkpoint.
    Sample(SampleArgs),
    /// Check model gradients against central differences.
    Gradcheck(GradcheckArgs),
    /// Train rectified flow on a 2-D ring and report sample quality.
    DemoRf(DemoRfArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitMode {
    Ext,
    Cont,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long, value_enum)]
    pub mode: SplitMode,
    /// Number of shots before the marker.
    #[arg(long)]
    pub at: Option<u32>,
    /// Extension prompt; defaults to an extractive summary of the later shots.
    #[arg(long)]
    pub prompt: Option<String>,
    pub script: PathBuf,
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    pub script: PathBuf,
    #[arg(long)]
    pub gen_shot: u32,
    /// Write PREFIX.pbm and PREFIX.layout instead of printing both.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    pub image_size: usize,
    #[arg(long)]
    pub no_id_prompts: bool,
}

#[derive(Debug, Subcommand)]
pub enum CorpusCommand {
    /// Generate a synthetic corpus from a config file.
    Gen { config: PathBuf },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub stage: u8,
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    pub checkpoint: PathBuf,
    /// File holding the user prompt text.
    #[arg(long)]
    pub prompt_file: PathBuf,
    /// Directory for the script and PPM keyframes.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub style: u8,
    #[arg(long, default_value_t = 1024)]
    pub max_tokens: usize,
    #[arg(long, default_value_t = 32)]
    pub ode_steps: usize,
    /// Sampling temperature; greedy when absent.
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub no_id_prompts: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Check every parameter element instead of a seeded sample.
    #[arg(long)]
    pub all: bool,
    #[arg(long, default_value_t = 8)]
    pub per_param: usize,
}

#[derive(Debug, Args)]
pub struct DemoRfArgs {
    #[arg(long, default_value_t = 3000)]
    pub steps: usize,
    #[arg(long, default_value_t = 256)]
    pub batch: usize,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
}

fn usage() -> clap::builder::StyledStr {
    <Cli as clap::CommandFactory>::command().render_usage()
}

/// Runs one invocation; `argv[0]` is the program name.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{text}");
                0
            } else {
                let _ = write!(err, "{text}");
                if !text.contains("Usage:") {
                    let _ = writeln!(err, "\n{}", usage());
                }
                2
            };
        }
    };
    match commands::dispatch(&cli, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message());
            if e.code() == 2 {
                let _ = writeln!(err, "\n{}", usage());
            }
            e.code()
        }
    }
}
