//! The subcommands. Each reads the validated config, works under one output
//! directory and leaves its artifacts there.

use std::path::{Path, PathBuf};

use dtn_core::data::{generate_synthetic, load_census_income, Dataset, GroundTruth};
use dtn_core::evaluation::fi_report;
use dtn_core::interactions::FimKind;
use dtn_core::mtl::{write_gate_weights_csv, ModelConfig, ModelGraph, SetSelector, TrimRule};
use dtn_core::training::{evaluate, train, train_logged, TrainConfig, TrainOutcome};
use dtn_core::Scalar;
use serde_json::json;

use crate::config::{parse_module_ref, DataSource, ExperimentConfig, Precision};
use crate::error::{CliError, Result};
use crate::report::{compare_runs, run_rows, write_metrics, RunInfo, TaskMetrics, METRICS_FILE};

pub const OUTPUT_ROOT_ENV: &str = "DTN_OUTPUT_ROOT";
pub const RESOLVED_CONFIG: &str = "resolved_config.toml";
pub const CHECKPOINT: &str = "checkpoint.json";
pub const HISTORY: &str = "history.jsonl";
pub const TRIM_DIR: &str = "trimmed";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    PrepareData,
    Train,
    Evaluate,
    FeatureImportance,
    GateWeights,
    Trim,
    ExportRepr,
    Report,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::PrepareData => "prepare-data",
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::FeatureImportance => "feature-importance",
            Command::GateWeights => "gate-weights",
            Command::Trim => "trim",
            Command::ExportRepr => "export-repr",
            Command::Report => "report",
        }
    }
}

/// Everything a command needs besides the config.
#[derive(Debug, Clone, Default)]
pub struct Invocation {
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// `report` only.
    pub runs: Vec<PathBuf>,
    pub baseline: Option<String>,
}

/// Train/test data plus, for synthetic sources, the generating process.
pub struct Data {
    pub train: Dataset,
    pub test: Dataset,
    pub truth: Option<GroundTruth>,
    pub fingerprint: String,
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<Data> {
    let (train, test, truth) = match cfg.dataset.source {
        DataSource::Synthetic => {
            let s = cfg.synthetic();
            let (train, test, _, truth) = generate_synthetic(s.n_train, s.n_test, &s.resolved_spec()?, cfg.dataset.seed)?;
            (train, test, Some(truth))
        }
        DataSource::Census => {
            let c = cfg.census();
            let (train_path, test_path) = c.paths()?;
            let (train, test, _) = load_census_income(train_path, test_path, &c.options())?;
            (train, test, None)
        }
    };
    let fingerprint = format!("{}-{}", &train.fingerprint()[..16], &test.fingerprint()[..16]);
    Ok(Data {
        train,
        test,
        truth,
        fingerprint,
    })
}

/// The model section with defaults resolved; MemoNet modules without an explicit
/// field choice cross the generator's relevant pairs on synthetic data.
pub fn model_config(cfg: &ExperimentConfig, data: &Data) -> ModelConfig {
    let mut m = cfg.model.resolved(data.train.schema().tasks.len());
    if let Some(truth) = &data.truth {
        let pairs: Vec<[String; 2]> = truth
            .pairs
            .iter()
            .map(|p| [truth.features[p.a].clone(), truth.features[p.b].clone()])
            .collect();
        let categorical = |name: &str| {
            let s = data.train.schema();
            s.feature_index(name).is_some_and(|f| s.features[f].is_categorical())
        };
        let pairs: Vec<[String; 2]> = pairs.into_iter().filter(|[a, b]| categorical(a) && categorical(b)).collect();
        if !pairs.is_empty() {
            let specs = m
                .shared_modules
                .iter_mut()
                .flatten()
                .chain(m.task_modules.iter_mut().flatten())
                .chain(m.task_module_overrides.values_mut().flatten())
                .chain(m.stack.iter_mut());
            for s in specs {
                if s.kind == FimKind::MemoNet && s.pairs.is_none() && s.fields.is_none() {
                    s.pairs = Some(pairs.clone());
                }
            }
        }
    }
    m
}

pub fn output_dir(cfg: Option<&ExperimentConfig>, inv: &Invocation) -> Result<PathBuf> {
    if let Some(o) = &inv.out {
        return Ok(o.clone());
    }
    let cfg = cfg.ok_or_else(|| CliError::Usage("--out is required without a config".into()))?;
    if let Some(d) = &cfg.output.dir {
        return Ok(d.clone());
    }
    let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
    Ok(root.join(cfg.run_name()))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    write(path, serde_json::to_string_pretty(value).expect("json value"))
}

/// Runs `command`; returns the directory holding its artifacts.
pub fn run(command: Command, cfg: Option<&ExperimentConfig>, inv: &Invocation) -> Result<PathBuf> {
    let out = output_dir(cfg, inv)?;
    create_dir(&out)?;
    if command == Command::Report {
        return report(inv, &out);
    }
    let cfg = cfg.ok_or_else(|| CliError::Usage(format!("`{}` needs --config or --preset", command.as_str())))?;
    let data = load_data(cfg)?;
    write(&out.join(RESOLVED_CONFIG), cfg.resolved_toml(data.train.schema().tasks.len())?)?;
    match cfg.precision {
        Precision::F32 => dispatch::<f32>(command, cfg, &data, inv, &out)?,
        Precision::F64 => dispatch::<f64>(command, cfg, &data, inv, &out)?,
    }
    Ok(out)
}

fn dispatch<S: Scalar>(command: Command, cfg: &ExperimentConfig, data: &Data, inv: &Invocation, out: &Path) -> Result<()> {
    match command {
        Command::PrepareData => prepare_data(data, out),
        Command::Train => train_cmd::<S>(cfg, data, out),
        Command::Evaluate => {
            let model = load_model::<S>(inv, out, data)?;
            let info = RunInfo::load(out).ok();
            finish_run(cfg, data, &model, out, &cfg.run_name(), info.as_ref(), None)
        }
        Command::FeatureImportance => {
            let model = load_model::<S>(inv, out, data)?;
            feature_importance(cfg, data, &model, out)
        }
        Command::GateWeights => {
            let model = load_model::<S>(inv, out, data)?;
            let weights = model.extract_gate_weights(&data.test, cfg.evaluation.batch_size)?;
            write_gate_weights_csv(&weights, out.join("gate_weights.csv"))?;
            Ok(())
        }
        Command::Trim => {
            let model = load_model::<S>(inv, out, data)?;
            trim_cmd(cfg, data, model, out)
        }
        Command::ExportRepr => {
            let model = load_model::<S>(inv, out, data)?;
            export_repr(cfg, data, &model, out)
        }
        Command::Report => unreachable!("handled before loading data"),
    }
}

fn prepare_data(data: &Data, out: &Path) -> Result<()> {
    let dir = out.join("data");
    create_dir(&dir)?;
    data.train.write_csv(dir.join("train.csv"))?;
    data.test.write_csv(dir.join("test.csv"))?;
    write_json(&dir.join("schema.json"), &**data.train.schema())?;
    write_json(
        &dir.join("summary.json"),
        &json!({
            "fingerprint": data.fingerprint,
            "train_rows": data.train.len(),
            "test_rows": data.test.len(),
            "train_label_means": data.train.label_means(),
            "test_label_means": data.test.label_means(),
        }),
    )
}

fn train_cmd<S: Scalar>(cfg: &ExperimentConfig, data: &Data, out: &Path) -> Result<()> {
    let mconf = model_config(cfg, data);
    let model: ModelGraph<S> = ModelGraph::build(&mconf, data.train.schema(), cfg.training.seed)?;
    let outcome = train_logged(model, &data.train, &data.test, &cfg.training, Some(&out.join(HISTORY)))?;
    let name = cfg.run_name();
    save_checkpoint(&outcome.model, &out.join(CHECKPOINT), data, &name)?;
    finish_run(cfg, data, &outcome.model, out, &name, None, Some(&outcome))
}

fn save_checkpoint<S: Scalar>(model: &ModelGraph<S>, path: &Path, data: &Data, name: &str) -> Result<()> {
    model.save(path, json!({ "fingerprint": data.fingerprint, "name": name }))?;
    Ok(())
}

/// Test-set metrics, `metrics.csv` and `run.json` for a model.
fn finish_run<S: Scalar>(
    cfg: &ExperimentConfig,
    data: &Data,
    model: &ModelGraph<S>,
    out: &Path,
    name: &str,
    previous: Option<&RunInfo>,
    outcome: Option<&TrainOutcome<S>>,
) -> Result<()> {
    let (aucs, lls) = evaluate(model, &data.test, cfg.evaluation.batch_size)?;
    let info = RunInfo {
        name: name.to_string(),
        architecture: model.kind().as_str().to_string(),
        precision: S::NAME.to_string(),
        fingerprint: data.fingerprint.clone(),
        parameters: model.parameter_count(),
        seed: cfg.training.seed,
        best_epoch: outcome.map(|o| o.best_epoch).unwrap_or_else(|| previous.and_then(|p| p.best_epoch)),
        status: outcome
            .map(|o| serde_json::to_value(&o.status).expect("status serializes"))
            .or_else(|| previous.map(|p| p.status.clone()))
            .unwrap_or(serde_json::Value::Null),
        metrics: model
            .schema
            .tasks
            .iter()
            .zip(aucs.iter().zip(&lls))
            .map(|(t, (a, l))| TaskMetrics {
                task: t.clone(),
                auc: *a,
                logloss: Some(*l),
            })
            .collect(),
    };
    info.save(out)?;
    let baseline = match &cfg.evaluation.baseline {
        Some(dir) => Some(RunInfo::load(dir)?),
        None => None,
    };
    let rows = run_rows(&info, baseline.as_ref(), &cfg.evaluation.metrics)?;
    write_metrics(&rows, &out.join(METRICS_FILE))
}

fn load_model<S: Scalar>(inv: &Invocation, out: &Path, data: &Data) -> Result<ModelGraph<S>> {
    let path = inv.checkpoint.clone().unwrap_or_else(|| out.join(CHECKPOINT));
    if !path.exists() {
        return Err(CliError::MissingCheckpoint(path.display().to_string()));
    }
    let ck = dtn_core::mtl::read_checkpoint(&path)?;
    if let Some(fp) = ck.meta.get("fingerprint").and_then(|v| v.as_str()) {
        if fp != data.fingerprint {
            return Err(CliError::Compare(format!(
                "checkpoint {} was trained on dataset {fp}, config describes {}",
                path.display(),
                data.fingerprint
            )));
        }
    }
    Ok(ModelGraph::from_checkpoint(ck)?)
}

fn feature_importance<S: Scalar>(cfg: &ExperimentConfig, data: &Data, model: &ModelGraph<S>, out: &Path) -> Result<()> {
    let fi = &cfg.evaluation.fi;
    let report = fi_report(
        model,
        &data.test,
        fi.features.as_deref(),
        fi.repeats,
        fi.seed,
        cfg.evaluation.batch_size,
    )?;
    report.write_csv(out.join("fi.csv"))?;
    report.write_scatter_csv(out.join("fi_scatter.csv"))?;
    let mut summary = json!({
        "tasks": report.tasks,
        "baseline_auc": report.baseline_auc,
        "correlations": report.correlations,
        "repeats": report.repeats,
        "seed": report.seed,
    });
    if let (Some(truth), true) = (&data.truth, report.tasks.len() >= 2) {
        let relevant: Vec<usize> = report
            .features
            .iter()
            .enumerate()
            .filter(|(_, f)| {
                let i = truth.features.iter().position(|n| n == *f).expect("generator feature");
                (0..truth.tasks.len()).any(|t| truth.is_relevant(i, t))
            })
            .map(|(i, _)| i)
            .collect();
        summary["relevant_features"] = json!(relevant.iter().map(|&i| &report.features[i]).collect::<Vec<_>>());
        summary["relevant_correlation"] = json!(report.correlation_over(&relevant, 0, 1));
    }
    write_json(&out.join("fi_summary.json"), &summary)
}

fn trim_rule(cfg: &ExperimentConfig) -> Result<TrimRule> {
    let t = &cfg.trim;
    if let Some(keep) = &t.keep {
        return Ok(TrimRule::Keep(keep.clone()));
    }
    if let Some(list) = &t.remove {
        let refs = list
            .iter()
            .map(|r| parse_module_ref(r).map_err(CliError::Usage))
            .collect::<Result<Vec<_>>>()?;
        return Ok(TrimRule::Remove(refs));
    }
    if let Some(th) = t.threshold {
        return Ok(TrimRule::Threshold(th));
    }
    Err(CliError::Config {
        path: "trim".into(),
        message: "no trim rule (keep, remove or threshold) configured".into(),
    })
}

/// Trims, optionally fine-tunes, and writes everything under `trimmed/`.
fn trim_cmd<S: Scalar>(cfg: &ExperimentConfig, data: &Data, model: ModelGraph<S>, out: &Path) -> Result<()> {
    let rule = trim_rule(cfg)?;
    let weights = match rule {
        TrimRule::Threshold(_) => Some(model.extract_gate_weights(&data.train, cfg.evaluation.batch_size)?),
        _ => None,
    };
    let (mut trimmed, report) = model.trim(&rule, weights.as_deref())?;
    if cfg.trim.fine_tune_epochs > 0 {
        let tc = TrainConfig {
            epochs: cfg.trim.fine_tune_epochs,
            patience: None,
            ..cfg.training.clone()
        };
        trimmed = train(trimmed, &data.train, &data.test, &tc)?.model;
    }
    let dir = out.join(TRIM_DIR);
    create_dir(&dir)?;
    let name = format!("{}-trim", cfg.run_name());
    save_checkpoint(&trimmed, &dir.join(CHECKPOINT), data, &name)?;
    write_json(&dir.join("trim_report.json"), &report)?;
    finish_run(cfg, data, &trimmed, &dir, &name, None, None)
}

fn export_repr<S: Scalar>(cfg: &ExperimentConfig, data: &Data, model: &ModelGraph<S>, out: &Path) -> Result<()> {
    let e = &cfg.evaluation.export;
    let selectors = e
        .selectors
        .iter()
        .map(|s| s.parse::<SetSelector>())
        .collect::<dtn_core::Result<Vec<_>>>()?;
    let count = e.sample_count.min(data.test.len());
    let export = model.export_representations(&data.test, &selectors, count, e.seed)?;
    export.write_csv(out.join("representations.csv"))?;
    let mut distances = Vec::new();
    for a in 0..export.blocks.len() {
        for b in a + 1..export.blocks.len() {
            let label = |i: usize| format!("{}:{}:{}", export.blocks[i].0, export.blocks[i].1, export.blocks[i].2);
            distances.push(json!({ "a": label(a), "b": label(b), "centroid_distance": export.centroid_distance(a, b) }));
        }
    }
    write_json(&out.join("representations_summary.json"), &json!({ "samples": count, "distances": distances }))
}

fn report(inv: &Invocation, out: &Path) -> Result<PathBuf> {
    if inv.runs.is_empty() {
        return Err(CliError::Usage("report needs at least one --runs directory".into()));
    }
    let baseline = inv
        .baseline
        .as_deref()
        .ok_or_else(|| CliError::Usage("report needs --baseline".into()))?;
    let rows = compare_runs(&inv.runs, baseline)?;
    write_metrics(&rows, &out.join("comparison.csv"))?;
    Ok(out.to_path_buf())
}
