use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, CheckpointMeta, DevMetric};
use super::config::ExperimentConfig;
use super::prepare::{cmd_prepare, datasets, PreparedTask};
use crate::data::{load_glove, Task};
use crate::error::{Error, Result};
use crate::model::{EmbeddingKind, Mode, Model};
use crate::tensor::Float;
use crate::train::{check_data, evaluate, Evaluation, MetricsRecord, SplitName, Trainer};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config.txt";
pub const CHECKPOINT_FILE: &str = "best.mtsk";
pub const RESULT_FILE: &str = "result.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub accuracy: f64,
    pub loss: f64,
}

/// Contents of `result.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub mode: String,
    pub embedding: String,
    pub seed: u64,
    pub f64: bool,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_dev_accuracy: f64,
    pub stopped_early: bool,
    pub test: BTreeMap<String, TaskScore>,
}

#[derive(Debug)]
pub struct TrainReport {
    pub run_dir: PathBuf,
    pub records: Vec<MetricsRecord>,
    pub test: Evaluation,
    pub result: RunResult,
}

/// Per-task accuracy lines plus confusion matrices.
pub fn format_evaluation(eval: &Evaluation) -> String {
    let mut out = String::new();
    for t in &eval.tasks {
        let _ = writeln!(
            out,
            "{} {} accuracy {:.4} ({}/{}), loss {:.4}",
            eval.split,
            t.task,
            t.accuracy(),
            t.confusion.correct(),
            t.confusion.total(),
            t.loss
        );
        let _ = writeln!(out, "{}", t.confusion);
    }
    out
}

/// One JSON object on one line.
pub fn summary_row(eval: &Evaluation, mode: Mode, checkpoint: &Path) -> String {
    let mut row = serde_json::Map::new();
    row.insert("checkpoint".into(), checkpoint.display().to_string().into());
    row.insert("split".into(), eval.split.name().into());
    row.insert("mode".into(), mode.name().into());
    for t in &eval.tasks {
        row.insert(format!("{}_accuracy", t.task), t.accuracy().into());
        row.insert(format!("{}_loss", t.task), t.loss.into());
    }
    row.insert("mean_accuracy".into(), eval.mean_accuracy().into());
    serde_json::Value::Object(row).to_string()
}

/// Copies prepared vocabulary sizes into the model config.
fn adopt_vocab(cfg: &mut ExperimentConfig, prepared: &[(Task, PreparedTask)]) {
    for (task, p) in prepared {
        match task {
            Task::Pol => cfg.model.vocab_pol = p.vocab.len(),
            Task::Subj => cfg.model.vocab_subj = p.vocab.len(),
        }
    }
}

fn build_model<T: Float>(cfg: &ExperimentConfig, prepared: &[(Task, PreparedTask)]) -> Result<Model<T>> {
    let mut model = Model::new(cfg.model.clone(), cfg.plan.seed)?;
    if let (Some(path), EmbeddingKind::Glove) = (&cfg.glove, cfg.model.embedding) {
        for (task, p) in prepared {
            let (table, found) = load_glove::<T>(path, &p.vocab, cfg.model.d_emb, cfg.plan.seed)?;
            info!("{task}: {found} of {} vocabulary words have GloVe vectors", p.vocab.len() - 2);
            model.set_embedding(*task, table)?;
        }
    }
    Ok(model)
}

/// `{out}/{timestamp}-{mode}-seed{seed}`, suffixed on collision.
fn create_run_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let stem = format!(
        "{}-{}-seed{}",
        chrono::Local::now().format("%Y%m%d-%H%M%S"),
        cfg.plan.mode,
        cfg.plan.seed
    );
    for n in 0.. {
        let name = if n == 0 { stem.clone() } else { format!("{stem}-{n}") };
        let dir = cfg.out.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(&dir, e)),
        }
    }
    unreachable!()
}

/// Prepares data if needed, trains, and writes the run directory.
pub fn cmd_train(cfg: &ExperimentConfig, resume: Option<&Path>) -> Result<TrainReport> {
    if cfg.f64 {
        train_typed::<f64>(cfg.clone(), resume)
    } else {
        train_typed::<f32>(cfg.clone(), resume)
    }
}

fn train_typed<T: Float>(mut cfg: ExperimentConfig, resume: Option<&Path>) -> Result<TrainReport> {
    cfg.validate()?;
    let prepared = cmd_prepare(&cfg)?;
    adopt_vocab(&mut cfg, &prepared);
    cfg.validate()?;
    let mut model = build_model::<T>(&cfg, &prepared)?;
    let data = datasets(&cfg, prepared)?;

    let mut restored = None;
    if let Some(path) = resume {
        let ckpt = Checkpoint::load(path)?;
        ckpt.load_into(&mut model.store)?;
        let adam = ckpt.optimizer(cfg.plan.adam.clone(), &model.store)?;
        let (epoch, step) = ckpt.meta.as_ref().map_or((0, 0), |m| (m.epoch as usize, m.step));
        restored = Some((adam, epoch, step));
    }
    let mut trainer = Trainer::new(cfg.plan.clone(), model, &data)?;
    if let Some((adam, epoch, step)) = restored {
        trainer.adam = adam;
        trainer.epoch = epoch;
        trainer.step = step;
        if epoch >= cfg.plan.epochs {
            return Err(Error::Usage(format!("checkpoint is at epoch {epoch}; raise epochs to continue")));
        }
    }

    let run_dir = create_run_dir(&cfg)?;
    cfg.save(&run_dir.join(CONFIG_FILE))?;
    let metrics_path = run_dir.join(METRICS_FILE);
    let mut metrics = File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    writeln!(metrics, "{}", MetricsRecord::CSV_HEADER).map_err(|e| Error::io(&metrics_path, e))?;
    let mut write_error = None;
    let outcome = trainer.fit(|rows| {
        let body: String = rows.iter().map(|r| r.csv_row() + "\n").collect();
        if let Err(e) = metrics.write_all(body.as_bytes()).and_then(|_| metrics.flush()) {
            write_error.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_error {
        return Err(Error::io(&metrics_path, e));
    }

    let dev = outcome
        .records
        .iter()
        .filter(|r| r.epoch == outcome.best_epoch && r.split == SplitName::Dev)
        .map(|r| DevMetric { task: r.task, loss: r.loss, accuracy: r.accuracy })
        .collect();
    let meta = CheckpointMeta { epoch: outcome.best_epoch as u32, step: trainer.step, dev };
    let ckpt_path = run_dir.join(CHECKPOINT_FILE);
    Checkpoint::capture(&cfg, &outcome.best_params, Some(&outcome.best_adam), Some(meta)).save(&ckpt_path)?;

    // Scored from the saved file so that `eval` on it prints the same numbers.
    let saved = Checkpoint::load(&ckpt_path)?;
    let mut best = Model::<T>::new(cfg.model.clone(), cfg.plan.seed)?;
    saved.load_into(&mut best.store)?;
    let test = evaluate(&best, cfg.plan.mode, &data, SplitName::Test, cfg.plan.eval_batch_size)?;

    let result = RunResult {
        mode: cfg.plan.mode.to_string(),
        embedding: cfg.model.embedding.to_string(),
        seed: cfg.plan.seed,
        f64: cfg.f64,
        epochs_run: trainer.epoch,
        best_epoch: outcome.best_epoch,
        best_dev_accuracy: outcome.best_dev_accuracy,
        stopped_early: outcome.stopped_early,
        test: test
            .tasks
            .iter()
            .map(|t| (t.task.to_string(), TaskScore { accuracy: t.accuracy(), loss: t.loss }))
            .collect(),
    };
    let result_path = run_dir.join(RESULT_FILE);
    let json = serde_json::to_string_pretty(&result).expect("plain data serializes");
    fs::write(&result_path, json + "\n").map_err(|e| Error::io(&result_path, e))?;
    Ok(TrainReport { run_dir, records: outcome.records, test, result })
}

/// Scores a checkpoint on one split.
///
/// The checkpoint's own config is used unless `config` is given; `mode`
/// overrides the evaluated mode either way.
pub fn cmd_eval(
    checkpoint: &Path,
    config: Option<ExperimentConfig>,
    mode: Option<Mode>,
    split: SplitName,
) -> Result<(Evaluation, Mode)> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let mut cfg = config.unwrap_or_else(|| ckpt.config.clone());
    if let Some(m) = mode {
        cfg.plan.mode = m;
    }
    if ckpt.meta.is_none() {
        warn!("{}: no META section", checkpoint.display());
    }
    let eval = if cfg.f64 {
        eval_typed::<f64>(&ckpt, cfg.clone(), split)?
    } else {
        eval_typed::<f32>(&ckpt, cfg.clone(), split)?
    };
    Ok((eval, cfg.plan.mode))
}

fn eval_typed<T: Float>(ckpt: &Checkpoint, mut cfg: ExperimentConfig, split: SplitName) -> Result<Evaluation> {
    cfg.validate()?;
    let prepared = cmd_prepare(&cfg)?;
    adopt_vocab(&mut cfg, &prepared);
    let mut model = Model::<T>::new(cfg.model.clone(), cfg.plan.seed)?;
    ckpt.load_into(&mut model.store)?;
    let data = datasets(&cfg, prepared)?;
    check_data(&model, cfg.plan.mode, &data)?;
    evaluate(&model, cfg.plan.mode, &data, split, cfg.plan.eval_batch_size)
}
