use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dtn_cli::config::{parse_config, preset};
use dtn_cli::{load_config, run, CliError, Command, Invocation};

#[derive(Parser)]
#[command(name = "dtn", version, about = "Train, evaluate and inspect multi-task CTR/CVR models")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Built-in preset instead of a config file (census-small, synthetic-default, census-full).
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Override a config key, e.g. `--set training.seed=7`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (defaults to output.dir, then $DTN_OUTPUT_ROOT/<name>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Checkpoint to read instead of <out>/checkpoint.json.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Worker threads; 1 gives the single-threaded determinism mode.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Load or generate the dataset and write it out for inspection.
    PrepareData(Common),
    /// Train a model and write checkpoint, history and metrics.
    Train(Common),
    /// Recompute test metrics from a checkpoint.
    Evaluate(Common),
    /// Per-task permutation feature importance.
    FeatureImportance(Common),
    /// Dataset-mean gate weights.
    GateWeights(Common),
    /// Remove modules by gate weight or explicit rule.
    Trim(Common),
    /// Export module output vectors for sampled examples.
    ExportRepr(Common),
    /// Compare runs against a baseline run.
    Report {
        /// Run directories to compare.
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        /// Name of the baseline run.
        #[arg(long)]
        baseline: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn execute(cli: Cli) -> Result<PathBuf, CliError> {
    let (command, common) = match cli.command {
        Cmd::PrepareData(c) => (Command::PrepareData, c),
        Cmd::Train(c) => (Command::Train, c),
        Cmd::Evaluate(c) => (Command::Evaluate, c),
        Cmd::FeatureImportance(c) => (Command::FeatureImportance, c),
        Cmd::GateWeights(c) => (Command::GateWeights, c),
        Cmd::Trim(c) => (Command::Trim, c),
        Cmd::ExportRepr(c) => (Command::ExportRepr, c),
        Cmd::Report { runs, baseline, out } => {
            let inv = Invocation {
                out: Some(out),
                runs,
                baseline: Some(baseline),
                ..Default::default()
            };
            return run(Command::Report, None, &inv);
        }
    };
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Other(e.to_string()))?;
    }
    let cfg = match (&common.config, &common.preset) {
        (Some(path), _) => load_config(path, &common.overrides)?,
        (None, Some(name)) => parse_config(preset(name)?, &common.overrides)?,
        (None, None) => return Err(CliError::Usage("pass --config <path> or --preset <name>".into())),
    };
    let inv = Invocation {
        out: common.out,
        checkpoint: common.checkpoint,
        ..Default::default()
    };
    run(command, Some(&cfg), &inv)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
