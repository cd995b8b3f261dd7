//! Command-line harness for the spectral-aligned pruning pipeline.

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use commands::{Context, ModelSpec};
use config::{LibrarySection, RunConfig};
use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "sap",
    version,
    about = "Spectral-aligned structured pruning for transformer ECC decoders"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(short, long)]
    pub config: PathBuf,
    /// Output directory (overrides `out_dir` in the config).
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// Fallback output directory when neither `--out` nor `out_dir` is set.
    #[arg(long, env = "SAP_OUT_DIR", hide = true)]
    pub env_out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the backbone decoder on the configured code (and mixture).
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Fisher-score units and prune to one or more FLOPs-reduction targets.
    Prune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// FLOPs reduction targets in [0, 1); repeatable or comma-separated.
        #[arg(long, value_delimiter = ',')]
        ratio: Vec<f64>,
        /// Apply this mask instead of scoring units.
        #[arg(long, conflicts_with = "ratio")]
        use_mask: Option<PathBuf>,
    },
    /// Reuse a library mask for the configured code or derive and store a new one.
    Sap {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        library: PathBuf,
        /// Start an empty library when the file does not exist.
        #[arg(long)]
        create_new: bool,
    },
    /// Train LoRA adapters on a pruned checkpoint with distillation.
    Recover {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        student: PathBuf,
        /// Unpruned teacher; optional when `--gamma 0`.
        #[arg(long)]
        teacher: Option<PathBuf>,
        /// Distillation weight (0 trains on BCE alone).
        #[arg(long)]
        gamma: Option<f64>,
        /// Adapter ranks; repeatable or comma-separated.
        #[arg(long, value_delimiter = ',')]
        rank: Vec<usize>,
        /// Also write merged checkpoints.
        #[arg(long)]
        merge: bool,
    },
    /// Monte-Carlo BER/FER of a decoder.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        /// LoRA adapters applied on top of `--checkpoint`.
        #[arg(long, requires = "checkpoint")]
        adapters: Option<PathBuf>,
        /// Eb/N0 points in dB; defaults to `eval.snr_db`.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        snr: Vec<f64>,
        /// Name used in the output file `eval_<label>.csv`.
        #[arg(long)]
        label: Option<String>,
    },
    /// Spectral similarity against dedicated-mask overlap over code pairs.
    Correlate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        backbone: PathBuf,
    },
    /// Inspect or extend a mask library.
    #[command(subcommand)]
    Library(LibraryCommand),
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct ModelArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Belief propagation on the code's Tanner graph.
    #[arg(long)]
    pub bp: bool,
    /// Per-bit sign decisions with no decoding.
    #[arg(long)]
    pub hard_decision: bool,
}

#[derive(Debug, Subcommand)]
pub enum LibraryCommand {
    Show {
        #[arg(long)]
        library: PathBuf,
    },
    Add {
        #[arg(long)]
        library: PathBuf,
        /// Catalog key or alist path.
        #[arg(long)]
        code: String,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        label: Option<String>,
    },
}

fn context(common: Common) -> Result<Context, CliError> {
    let cfg = RunConfig::load(&common.config)?;
    Context::new(cfg, common.out, common.env_out)
}

pub fn execute(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Train { common } => commands::cmd_train(&context(common)?),
        Command::Prune {
            common,
            checkpoint,
            ratio,
            use_mask,
        } => commands::cmd_prune(&context(common)?, &checkpoint, &ratio, use_mask.as_deref()),
        Command::Sap {
            common,
            checkpoint,
            library,
            create_new,
        } => commands::cmd_sap(&context(common)?, &checkpoint, &library, create_new),
        Command::Recover {
            common,
            student,
            teacher,
            gamma,
            rank,
            merge,
        } => commands::cmd_recover(
            &context(common)?,
            &student,
            teacher.as_deref(),
            gamma,
            &rank,
            merge,
        ),
        Command::Eval {
            common,
            model,
            adapters,
            snr,
            label,
        } => {
            let spec = match (model.checkpoint, model.bp, model.hard_decision) {
                (Some(path), _, _) => ModelSpec::Checkpoint { path, adapters },
                (None, true, _) => ModelSpec::Bp,
                _ => ModelSpec::HardDecision,
            };
            commands::cmd_eval(&context(common)?, &spec, &snr, label.as_deref())
        }
        Command::Correlate { common, backbone } => {
            commands::cmd_correlate(&context(common)?, &backbone)
        }
        Command::Library(LibraryCommand::Show { library }) => commands::cmd_library_show(&library),
        Command::Library(LibraryCommand::Add {
            library,
            code,
            mask,
            label,
        }) => commands::cmd_library_add(
            &library,
            &code,
            &mask,
            label.as_deref(),
            &LibrarySection::default(),
        ),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
