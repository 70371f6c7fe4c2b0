//! `mgic`: builds multi-grained image-text corpora from detection-style
//! annotations.
//!
//! Exit codes: 0 success, 1 fatal input error, 2 configuration error,
//! 3 scorer bridge failure.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mgic_core::compose::RecipeConfig;

use crate::config::Overrides;

#[derive(Debug, Parser)]
#[command(name = "mgic", version, about = "Multi-grained image-text corpus compiler")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
struct ConfigArgs {
    /// Pipeline config (TOML, or JSON with a `.json` extension).
    #[arg(long, short)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Annotation recipe, letters from CLDR.
    #[arg(long)]
    recipe: Option<RecipeConfig>,
    #[arg(long)]
    mask_prob: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    budget: Option<usize>,
    /// Output directory (defaults to the config's `output_dir`).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            recipe: self.recipe,
            mask_prob: self.mask_prob,
            workers: self.workers,
            budget: self.budget,
            output_dir: self.out.clone(),
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the full pipeline and write samples, manifests and reports.
    Build(ConfigArgs),
    /// Corpus statistics for previously built samples.
    Stats {
        #[command(flatten)]
        args: ConfigArgs,
        /// Samples to count (defaults to `<out>/samples.jsonl`).
        #[arg(long)]
        samples: Option<PathBuf>,
        /// Also write a label-frequency histogram CSV for this label kind.
        #[arg(long, requires = "csv")]
        histogram: Option<String>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Percentage of evaluation concepts covered by training concepts.
    Overlap {
        /// One concept per line.
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        eval: PathBuf,
    },
    /// Render and tokenize instruction samples.
    Sft {
        /// JSONL instruction file, one sample spec per line.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        alpha: f32,
    },
    /// Schema checks only; prints one JSON line per rejected record.
    Validate {
        #[arg(long, short)]
        config: PathBuf,
    },
    /// Concept-coverage downsampling of a caption pool.
    Downsample {
        /// JSONL records `{caption_id, concepts}`.
        #[arg(long)]
        concepts: PathBuf,
        #[arg(long, default_value_t = 20)]
        min_freq: usize,
        #[arg(long, default_value_t = 50)]
        cap: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        out: PathBuf,
    },
}

/// Failure class, mapped to the process exit code.
#[derive(Debug)]
pub enum Failure {
    Input(anyhow::Error),
    Config(anyhow::Error),
    Bridge(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 1,
            Failure::Config(_) => 2,
            Failure::Bridge(_) => 3,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Input(e) | Failure::Config(e) | Failure::Bridge(e) => e,
        }
    }
}

/// Tags an error with its failure class.
pub trait Classify<T> {
    fn input(self) -> Result<T, Failure>;
    fn config(self) -> Result<T, Failure>;
    fn bridge(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn input(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Input(e.into()))
    }
    fn config(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Config(e.into()))
    }
    fn bridge(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Bridge(e.into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Build(args) => commands::build(&args.config, &args.overrides()),
        Command::Stats { args, samples, histogram, csv } => {
            commands::stats(&args.config, &args.overrides(), samples.as_deref(), histogram.as_deref(), csv.as_deref())
        }
        Command::Overlap { train, eval } => commands::overlap(&train, &eval),
        Command::Sft { input, out, alpha } => commands::sft(&input, &out, alpha),
        Command::Validate { config } => commands::validate(&config),
        Command::Downsample { concepts, min_freq, cap, seed, out } => {
            commands::downsample(&concepts, min_freq, cap, seed, &out)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
