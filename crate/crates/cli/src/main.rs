//! `prock` — extract an event log and knowledge graph from tabular data,
//! then train, evaluate, and apply a graph-encoded sequence predictor.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical
//! failure.

mod commands;
mod config;
mod dataset;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ModelFlags, SplitFlags, SplitPartArg, TaskArg, TrainFlags};
use error::EXIT_USAGE;

#[derive(Parser)]
#[command(
    name = "prock",
    version,
    about = "Process prediction over event logs with a knowledge-graph encoder"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn relational CSV tables into a triple file and an event log.
    Extract(ExtractArgs),
    /// Generate a synthetic benchmark dataset with a known signal depth.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint plus a run manifest.
    Train(TrainArgs),
    /// Score a stored split of the data against a checkpoint.
    Evaluate(EvaluateArgs),
    /// Emit one prediction per case as JSON lines.
    Predict(PredictArgs),
    /// Compare analytic gradients against finite differences on a
    /// built-in toy model.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
pub struct ExtractArgs {
    /// Schema mapping (TOML) describing tables, keys, and events.
    #[arg(long, value_name = "PATH")]
    pub schema: PathBuf,
    /// Directory holding the CSV tables the schema names.
    #[arg(long, value_name = "DIR")]
    pub data_dir: PathBuf,
    /// Output directory for kg.tsv, log.csv, and manifest.json.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SynthArgs {
    /// Number of cases to generate (at least 20).
    #[arg(long)]
    pub cases: Option<usize>,
    /// Hops between an event's entity and the label-determining node.
    #[arg(long)]
    pub kg_depth: Option<usize>,
    /// Label flip probability in [0, 0.5).
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for kg.tsv, log.csv, labels.csv, manifest.json.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Knowledge-graph triples, one head<TAB>relation<TAB>tail per line.
    #[arg(long, value_name = "PATH")]
    pub kg: PathBuf,
    /// Event log CSV with case,type,timestamp plus attribute columns.
    #[arg(long, value_name = "PATH")]
    pub log: PathBuf,
    /// Case outcome labels CSV (case,label columns).
    #[arg(long, value_name = "PATH", conflicts_with = "next_event")]
    pub labels: Option<PathBuf>,
    /// Train on next-event-type prediction from every proper prefix.
    #[arg(long)]
    pub next_event: bool,
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    /// Checkpoint path; the run manifest lands beside it.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// TOML config file; flags given here override it.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed: initialization, shuffling, dropout, and the split.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Batch-parallel width for training and validation scoring.
    #[arg(long)]
    pub workers: Option<usize>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub split: SplitFlags,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub kg: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub log: PathBuf,
    /// Labels CSV; must be the file the checkpoint was trained from.
    #[arg(long, value_name = "PATH", conflicts_with = "next_event")]
    pub labels: Option<PathBuf>,
    /// Score next-event-type prediction (as trained).
    #[arg(long)]
    pub next_event: bool,
    /// Which stored split to score.
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitPartArg,
    /// Expected embedding dimension; fails if the checkpoint differs.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Also write the report here (a manifest lands beside it).
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub kg: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub log: PathBuf,
    /// Predict a single case instead of every case in the log.
    #[arg(long)]
    pub case: Option<String>,
    /// Also write the JSON lines here (a manifest lands beside it).
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Args)]
pub struct GradcheckArgs {
    /// Embedding dimension of the toy model.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Central-difference step.
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the check result as JSON.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's own exit code disagrees with the documented table;
            // help and version are successes, everything else is usage.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let result = match cli.command {
        Command::Extract(args) => commands::cmd_extract(args),
        Command::Synth(args) => commands::cmd_synth(args),
        Command::Train(args) => commands::cmd_train(args),
        Command::Evaluate(args) => commands::cmd_evaluate(args),
        Command::Predict(args) => commands::cmd_predict(args),
        Command::Gradcheck(args) => commands::cmd_gradcheck(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code as u8)
        }
    }
}
