#![allow(dead_code)]

use std::path::{Path, PathBuf};

use dtn_cli::config::preset;
use dtn_cli::{parse_config, run, Command, ExperimentConfig, Invocation};

/// The synthetic preset shrunk to a few seconds per run.
pub const QUICK: [&str; 4] = [
    "dataset.synthetic.n_train=3000",
    "dataset.synthetic.n_test=1000",
    "training.epochs=2",
    "evaluation.fi.repeats=2",
];

pub fn quick_config(extra: &[&str]) -> ExperimentConfig {
    let overrides: Vec<String> = QUICK.iter().chain(extra).map(|s| s.to_string()).collect();
    parse_config(preset("synthetic-default").unwrap(), &overrides).unwrap()
}

pub fn run_in(command: Command, cfg: &ExperimentConfig, out: &Path) -> PathBuf {
    let inv = Invocation {
        out: Some(out.to_path_buf()),
        ..Default::default()
    };
    run(command, Some(cfg), &inv).unwrap()
}

pub fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

/// Single-threaded execution of `f`.
pub fn serial<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f)
}
