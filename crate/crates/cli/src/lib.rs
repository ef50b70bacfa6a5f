//! Command-line front end: chunking, scoring, comparison, λ sweeps and
//! perplexity reports over JSONL corpora.

pub mod commands;
pub mod config;
pub mod error;
pub mod plot;
pub mod records;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use qchunker_core::metrics::Grid;

use commands::{ChunkArgs, ChunkStrategy, ScoreArgs, SweepArgs};
use config::{AppConfig, BackendKind};
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "qchunker", version, about = "Document chunking and chunk-quality scoring")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendKind>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Candidate partitions sampled per document.
    #[arg(long = "candidates", global = true)]
    pub candidates_p: Option<usize>,
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    /// Machine-readable output.
    #[arg(long, global = true)]
    pub json: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Chunk a corpus with a baseline strategy or the full pipeline.
    Chunk {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        strategy: ChunkStrategy,
        #[arg(long)]
        out: PathBuf,
        /// Characters for fixed, tokens for sentence.
        #[arg(long)]
        target_len: Option<usize>,
        /// Cosine threshold for semantic.
        #[arg(long, allow_negative_numbers = true)]
        threshold: Option<f64>,
        /// Where pipeline results are written (default: `<out>.results`).
        #[arg(long)]
        results_dir: Option<PathBuf>,
    },
    /// Score stored chunkings with ChunkScore.
    Score {
        #[arg(long)]
        chunks: PathBuf,
        /// Write the input lines back out with a `score` object added.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare two or more chunkings of the same corpus.
    Compare {
        #[arg(long = "chunks", required = true, num_args = 1..)]
        chunks: Vec<PathBuf>,
    },
    /// Correlate recombined scores with downstream results over a λ grid.
    Sweep {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        downstream: PathBuf,
        #[arg(long, default_value = "0:1:0.01")]
        grid: Grid,
        /// Write an SVG chart of r against λ.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Perplexity of each selected chunk before and after completion.
    PplReport {
        #[arg(long)]
        result: PathBuf,
    },
}

impl GlobalOpts {
    pub fn app_config(&self) -> Result<AppConfig, CliError> {
        let mut c = match &self.config {
            Some(p) => AppConfig::load(p)?,
            None => AppConfig::default(),
        };
        if let Some(v) = self.backend {
            c.backend = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.lambda {
            c.lambda = v;
        }
        if let Some(v) = self.alpha {
            c.alpha = v;
        }
        if let Some(v) = self.candidates_p {
            c.candidates_p = v;
        }
        if let Some(v) = self.parallelism {
            c.parallelism = v;
        }
        Ok(c)
    }
}

pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg = cli.global.app_config()?;
    let json = cli.global.json;
    match cli.command {
        Command::Chunk { input, strategy, out, target_len, threshold, results_dir } => {
            if let Some(t) = target_len {
                cfg.chunker.target_len = t;
            }
            if let Some(t) = threshold {
                cfg.chunker.similarity_threshold = t;
            }
            cfg.validate()?;
            commands::chunk(&cfg, &ChunkArgs { input, strategy, out, results_dir }, stdout)
        }
        Command::Score { chunks, out } => {
            cfg.validate()?;
            commands::score(&cfg, &ScoreArgs { chunks, out }, json, stdout)
        }
        Command::Compare { chunks } => {
            cfg.validate()?;
            commands::compare(&cfg, &chunks, json, stdout)
        }
        Command::Sweep { scores, downstream, grid, plot } => {
            commands::sweep(&SweepArgs { scores, downstream, grid, plot }, json, stdout)
        }
        Command::PplReport { result } => {
            cfg.validate()?;
            commands::ppl_report(&cfg, &result, json, stdout)
        }
    }
}
