//! `uatr`: synthesize data, pretrain, tune, infer and evaluate.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "uatr",
    version,
    about = "Template-guided tri-modal contrastive learning for underwater acoustic recognition"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic WAV dataset and its manifest.
    Synth {
        /// JSON synthetic dataset description; defaults apply to absent fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Contrastive pretraining on a manifest.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Training template, one clause per line.
        #[arg(long)]
        template: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        split: Split,
        /// Also write the per-epoch log here.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Adapt a pretrained checkpoint to a new dataset.
    Tune {
        #[command(subcommand)]
        strategy: Tune,
    },
    /// Classify one WAV file.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        wav: PathBuf,
        /// Candidate vessel types, one per line; the checkpoint's own labels if absent.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Accuracy of a checkpoint on the test recordings of each fold.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 4)]
        folds: usize,
        /// Evaluate this fold only.
        #[arg(long)]
        fold: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the report here as well as to stdout.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Pretrain and evaluate once per fold.
    Cv {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        template: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        folds: usize,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum Tune {
    /// Continue contrastive training under a (possibly new) template.
    Uart {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        template: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        split: Split,
    },
    /// Keep the audio encoder, add a softmax head and train on labels.
    Encoder {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Train the head only.
        #[arg(long)]
        freeze: bool,
        #[command(flatten)]
        split: Split,
    },
}

/// Optional restriction to the training recordings of one fold.
#[derive(Debug, Clone, Copy, Args)]
struct Split {
    /// Train on every fold except this one.
    #[arg(long)]
    fold: Option<usize>,
    #[arg(long, default_value_t = 4)]
    folds: usize,
}

/// Bad invocation or configuration (exit code 1).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    use uatr_core::Error as E;
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Protocol(_) => 3,
                E::Io { .. }
                | E::Data { .. }
                | E::Manifest { .. }
                | E::UnsupportedRate(_)
                | E::EmptyInput(_)
                | E::DegenerateBatch { .. }
                | E::Checkpoint(_) => 2,
                E::Config(_) | E::Contract(_) | E::Shape { .. } => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
