//! `actgad` command-line driver.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use actgad::pipeline::{Stage, Variant};
use actgad::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "actgad", version, about = "Cross-domain graph anomaly detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Default)]
pub struct Common {
    /// JSON run config; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated seeds overriding the config.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Output directory overriding the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StageArg {
    Pretrain,
    Align,
    Selflabel,
    All,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Pretrain => Stage::Pretrain,
            StageArg::Align => Stage::Align,
            StageArg::Selflabel => Stage::Selflabel,
            StageArg::All => Stage::All,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ExportStage {
    Align,
    Selflabel,
}

#[derive(Subcommand)]
enum Command {
    /// Write a config file holding every default.
    Init {
        #[arg(default_value = "actgad.json")]
        path: PathBuf,
    },
    /// Generate a synthetic source/target pair into the output directory.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train and score.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "all")]
        stage: StageArg,
        /// Variants to train and score (comma-separated); all by default.
        #[arg(long, value_delimiter = ',')]
        variant: Option<Vec<Variant>>,
    },
    /// Self labelling and refit for each α, from stored alignments.
    SweepAlpha {
        #[command(flatten)]
        common: Common,
        /// Comma-separated α values overriding the config.
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
    },
    /// Write source and target embeddings of one seed as CSV.
    ExportEmbeddings {
        #[command(flatten)]
        common: Common,
        /// Checkpoint that embeds the target graph.
        #[arg(long, value_enum, default_value = "align")]
        stage: ExportStage,
        /// Seed to export; the first configured seed by default.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 3,
        Error::MissingStage { .. } => 4,
        Error::DegenerateSelection(_) => 5,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Init { path } => commands::init(&path),
        Command::Generate { common } => commands::generate(&common),
        Command::Run { common, stage, variant } => {
            commands::run(&common, stage.into(), variant.as_deref().unwrap_or(&Variant::ALL))
        }
        Command::SweepAlpha { common, alphas } => commands::sweep_alpha(&common, alphas.as_deref()),
        Command::ExportEmbeddings { common, stage, seed } => {
            commands::export_embeddings(&common, matches!(stage, ExportStage::Selflabel), seed)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
