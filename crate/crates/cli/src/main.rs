//! `bostopic`: tokenize, embed, build triplets, fit, report and evaluate
//! bag-of-sentences topic models.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::Params;

#[derive(Debug, Parser)]
#[command(name = "bostopic", version, about = "Topic modeling over bags of sentence groups")]
struct Cli {
    /// Worker threads (defaults to one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Report format on standard output.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Text,
}

#[derive(Debug, Subcommand)]
pub(crate) enum Command {
    /// Split a corpus into sentence groups and dump the group index.
    Tokenize {
        #[arg(long)]
        corpus: Option<String>,
        /// JSONL output; standard output when omitted.
        #[arg(long)]
        out: Option<String>,
        #[command(flatten)]
        params: Params,
    },
    /// Embed every sentence group with an external provider command.
    Embed {
        #[arg(long)]
        corpus: Option<String>,
        /// Provider command line, split on whitespace.
        #[arg(long)]
        provider: Option<String>,
        #[arg(long)]
        out: Option<String>,
        #[command(flatten)]
        params: Params,
    },
    /// Build, filter and export fine-tuning triplets.
    Triplets {
        #[arg(long)]
        corpus: Option<String>,
        #[arg(long)]
        emb: Option<String>,
        /// Triplet file [default: triplets.jsonl].
        #[arg(long)]
        out: Option<String>,
        #[command(flatten)]
        params: Params,
    },
    /// Fit a topic model.
    Fit {
        #[arg(long)]
        corpus: Option<String>,
        #[arg(long)]
        emb: Option<String>,
        /// Model file [default: model.json].
        #[arg(long)]
        out: Option<String>,
        #[command(flatten)]
        params: Params,
    },
    /// Rank the words of every topic.
    Topics {
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        corpus: Option<String>,
        /// Keep inflected forms separate instead of merging stems.
        #[arg(long)]
        raw: bool,
        /// Report file; standard output when omitted.
        #[arg(long)]
        out: Option<String>,
        #[command(flatten)]
        params: Params,
    },
    /// Score a model: NMI against document labels and NPMI coherence.
    Eval {
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        corpus: Option<String>,
        /// Corpus used for co-occurrence counts; the modeled corpus when omitted.
        #[arg(long)]
        reference: Option<String>,
        #[arg(long)]
        out: Option<String>,
        #[command(flatten)]
        params: Params,
    },
    /// Run every stage, writing artifacts into a work directory.
    Pipeline {
        #[arg(long)]
        corpus: Option<String>,
        /// Precomputed embeddings; otherwise `--provider` is run.
        #[arg(long, conflicts_with = "provider")]
        emb: Option<String>,
        #[arg(long)]
        provider: Option<String>,
        /// Trainer command, called as `CMD <triplets> <trainer config> <model dir>`.
        #[arg(long, requires = "provider")]
        finetune: Option<String>,
        #[arg(long)]
        reference: Option<String>,
        #[arg(long, default_value = "bostopic-run")]
        workdir: PathBuf,
        #[command(flatten)]
        params: Params,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match commands::run(cli.command, cli.format) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
