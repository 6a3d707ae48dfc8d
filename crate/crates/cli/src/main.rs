mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "multirep", version, about = "Multi-representation masked-position retrieval")]
pub struct Cli {
    /// Flat key = value config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic keyword-retrieval task.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a vocabulary from JSONL texts and initialise a model.
    Init {
        /// JSONL files with id, optional title, and text.
        #[arg(long, num_args = 1.., required = true)]
        texts: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode a JSONL corpus into a representation file.
    Encode(EncodeArgs),
    /// Build dense and sparse indexes from a representation file.
    Index {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        reps: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Search an index with encoded queries and write a TREC run.
    Search(SearchArgs),
    /// Fuse a dense and a sparse run into a hybrid run.
    Fuse {
        #[arg(long)]
        dense: PathBuf,
        #[arg(long)]
        sparse: PathBuf,
        #[arg(long)]
        cutoff: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fine-tune a model on JSONL training items.
    Train {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate every (k_q, k_p) budget cell.
    Sweep {
        #[command(flatten)]
        data: EvalData,
        #[arg(long)]
        mode: Option<ModeArg>,
        #[arg(long)]
        metric: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-query budget oracles over a sweep's per-query grid.
    Oracle {
        /// per_query.csv written by the sweep command.
        #[arg(long)]
        grid: PathBuf,
        /// Query JSONL; adds feature correlations with oracle headroom.
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare single-vector, mean-pooled and MaxSim scoring.
    Decompose {
        #[command(flatten)]
        data: EvalData,
        #[arg(long)]
        k_q: Option<usize>,
        #[arg(long)]
        k_p: Option<usize>,
        #[arg(long)]
        metric: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compress a dense index into centroid codes and quantised residuals.
    Compress {
        /// Index directory written by the index command.
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Latency or storage benchmark on synthetic inputs.
    Bench {
        #[arg(long, value_enum)]
        axis: BenchAxis,
        /// Model directory for encoding; a random model is used otherwise.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a run against relevance judgments.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long)]
        metric: Option<String>,
        /// Per-query CSV output.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// JSONL with id, optional title, and text.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub target: TargetArg,
    /// Number of mask positions.
    #[arg(long)]
    pub k: usize,
    /// Decode up to this many tokens one pass at a time instead.
    #[arg(long, conflicts_with = "multistep")]
    pub sequential: Option<usize>,
    /// Unmask the masks over this many denoising steps.
    #[arg(long)]
    pub multistep: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Index directory written by the index command.
    #[arg(long, required_unless_present = "compressed")]
    pub index: Option<PathBuf>,
    /// Compressed index file; dense mode only.
    #[arg(long, conflicts_with = "index")]
    pub compressed: Option<PathBuf>,
    /// Query representation file.
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub cutoff: Option<usize>,
    #[arg(long)]
    pub n_probe: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalData {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub passages: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TargetArg {
    Query,
    Passage,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Dense,
    Sparse,
    Hybrid,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BenchAxis {
    Encoding,
    Search,
    Storage,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_target(false)
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::FAILURE
        }
    }
}
