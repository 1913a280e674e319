mod commands;
mod outcome;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use outcome::{CommandOutcome, Failure};

/// Download and preprocess news datasets, train and evaluate recommenders.
#[derive(Debug, Parser)]
#[command(name = "newsrec", version, propagate_version = true)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Random seed; becomes `--set seed=N` for training and seeds `synth`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory holding one sub-directory of YAML files per model.
    #[arg(long, global = true, default_value = "configs")]
    pub config_root: PathBuf,
    /// Dotted `key=value` override; repeatable, later ones win.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Print a single-line JSON summary instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fetch a dataset's archives, verify and unpack them.
    Download {
        /// mind-small, mind-large or ebnerd-demo.
        dataset: String,
        /// Target directory [default: data/<dataset>/raw].
        #[arg(long)]
        dir: Option<PathBuf>,
        /// Base URL to fetch the archives from instead of the official hosts.
        #[arg(long)]
        mirror: Option<String>,
    },
    /// Parse raw files into the unified corpus format.
    ///
    /// `--set min_freq=N` and `--set max_vocab_size=N` adjust the vocabulary.
    Preprocess {
        dataset: String,
        /// Raw dataset directory [default: data/<dataset>/raw].
        #[arg(long)]
        raw: Option<PathBuf>,
        /// Output corpus directory [default: data/<dataset>/corpus].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model, validating on the dev split after every epoch.
    Train {
        /// Model directory name under the config root (e.g. nrms_like).
        model: String,
        /// Corpus directory; same as `--set corpus_dir=DIR`.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Continue from an epoch checkpoint, in that checkpoint's run directory.
        #[arg(long, value_name = "CHECKPOINT")]
        resume: Option<PathBuf>,
        /// Resume even if the configuration changed since the checkpoint.
        #[arg(long, requires = "resume")]
        allow_fingerprint_mismatch: bool,
        /// Stop cleanly after this epoch.
        #[arg(long, value_name = "EPOCH")]
        stop_after_epoch: Option<usize>,
    },
    /// Print AUC, MRR, nDCG@5 and nDCG@10 of a checkpoint on a labeled split.
    ///
    /// `--set corpus_dir=DIR` points at a different copy of the corpus.
    Evaluate {
        checkpoint: PathBuf,
        /// train, dev or test.
        split: String,
    },
    /// Write one line of candidate scores per impression of a split.
    Predict {
        checkpoint: PathBuf,
        split: String,
        /// Prediction file to write.
        out: PathBuf,
    },
    /// Serve the HTTP job API (and a built web interface, if given).
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8000)]
        port: u16,
        #[arg(long, default_value = "data")]
        data_dir: PathBuf,
        #[arg(long, default_value = "runs")]
        runs_dir: PathBuf,
        /// Training jobs allowed to run at once.
        #[arg(long, default_value_t = 1)]
        max_trainers: usize,
        /// Directory with the built web interface.
        #[arg(long = "static", value_name = "DIR")]
        static_dir: Option<PathBuf>,
    },
    /// Write a synthetic corpus with planted category preferences.
    ///
    /// Also writes `news_embeddings.tsv` (noisy category one-hots) for the
    /// precomputed-embedding model.
    Synth {
        /// Output directory; the corpus goes into `<out>/corpus`.
        #[arg(long, default_value = "data/planted")]
        out: PathBuf,
        /// The 40-news quick-test variant.
        #[arg(long)]
        small: bool,
    },
    /// List the runs under a directory with their final dev metrics.
    Runs {
        #[arg(long, default_value = "runs")]
        dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp(None).init();

    let name = commands::name(&cli.command);
    let outcome = commands::run(&cli).unwrap_or_else(|f: Failure| CommandOutcome::failed(f));
    outcome.print(name, cli.global.json);
    ExitCode::from(outcome.code)
}
