use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "reflex",
    version,
    about = "Train, replay, evaluate and serve the reflex dialogue engine"
)]
pub struct Cli {
    /// Session config (JSON). Bundled defaults are used when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Seed for training and generation. Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Run data-parallel stages on one thread.
    #[arg(long, global = true)]
    pub sequential: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the backchannel timing model, and optionally per-form models.
    TrainBackchannel {
        #[command(flatten)]
        train: TrainArgs,
        /// Directory for one-vs-rest form models.
        #[arg(long)]
        forms_out: Option<PathBuf>,
    },
    /// Fit the transition-relevance-place detector.
    TrainTrp(TrainArgs),
    /// Fit the take-the-turn model.
    TrainTake(TrainArgs),
    /// Fit the engagement estimator.
    TrainEngagement(TrainArgs),
    /// Replay corpora through the engine; writes logs and a metrics report.
    Replay {
        /// Corpus files or directories of `*.jsonl` files.
        #[arg(required = true)]
        corpus: Vec<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a decision log against its corpus.
    Eval {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Write the report here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = reflex_core::harness::metrics::DEFAULT_TOLERANCE_MS)]
        tolerance_ms: u64,
        #[arg(long, default_value_t = reflex_core::harness::metrics::DEFAULT_CUTIN_WINDOW_MS)]
        cutin_window_ms: u64,
    },
    /// Write a synthetic corpus with planted regularities.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        sessions: usize,
        /// Length of each session.
        #[arg(long)]
        session_ms: Option<u64>,
        /// Generator parameters (JSON); defaults when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Run the live session service.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Port for newline-delimited JSON connections.
        #[arg(long, default_value_t = 7878)]
        port: u16,
        /// Port for browser socket connections.
        #[arg(long)]
        ws_port: Option<u16>,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus files or directories of `*.jsonl` files.
    #[arg(required = true)]
    pub corpus: Vec<PathBuf>,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}
