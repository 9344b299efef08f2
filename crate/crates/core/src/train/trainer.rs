use log::{debug, info};

use crate::data::{EncodedBatch, Task};
use crate::error::{Error, Result};
use crate::fusion::{predict, LOG_FLOOR};
use crate::model::{Mode, Model, Pass};
use crate::tensor::{Float, ParamId, ParamStore, Tape};

use super::adam::{Adam, AdamConfig};
use super::batching::{make_batches, make_mtl_batches};
use super::dataset::{Datasets, SplitName};
use super::metrics::{ConfusionMatrix, Evaluation, MetricsRecord, TaskEvaluation};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainPlan {
    pub mode: Mode,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Stop after this many epochs without a better dev accuracy.
    pub patience: Option<usize>,
    pub adam: AdamConfig,
    pub eval_batch_size: usize,
}

impl Default for TrainPlan {
    fn default() -> Self {
        Self {
            mode: Mode::Mtl,
            epochs: 20,
            batch_size: 64,
            seed: 1,
            patience: None,
            adam: AdamConfig::default(),
            eval_batch_size: 256,
        }
    }
}

impl TrainPlan {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 || self.eval_batch_size < 1 {
            return Err(Error::Config("batch sizes must be at least 1".into()));
        }
        if !(self.adam.lr > 0.0) || !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return Err(Error::Config("invalid Adam hyperparameters".into()));
        }
        Ok(())
    }
}

/// Checks that every task the mode needs is present and shaped for the model.
pub fn check_data<T: Float>(model: &Model<T>, mode: Mode, data: &Datasets) -> Result<()> {
    for &task in mode.tasks() {
        let d = data.require(task)?;
        let want = model.config.max_len(task);
        let have = d.embedding_shape().map_or(d.set.max_len, |(l, _)| l);
        if have != want {
            return Err(Error::Config(format!(
                "{task} data has max length {have} but the model expects {want}"
            )));
        }
        if let Some((_, dim)) = d.embedding_shape() {
            if dim != model.config.d_emb {
                return Err(Error::Config(format!(
                    "{task} embedding file has dimension {dim} but the model expects {}",
                    model.config.d_emb
                )));
            }
        } else if model.embedding(task).is_none() {
            return Err(Error::Config(format!("{task} data has no embedding file for a bert-file model")));
        }
    }
    Ok(())
}

#[derive(Default)]
struct TaskTally {
    loss_sum: f64,
    rows: usize,
    correct: usize,
}

impl TaskTally {
    fn record(&mut self, mean_loss: f64, batch: &EncodedBatch<impl Float>, predictions: &[usize]) {
        self.loss_sum += mean_loss * batch.batch as f64;
        self.rows += batch.batch;
        self.correct += predictions.iter().zip(&batch.labels).filter(|(p, y)| p == y).count();
    }
}

pub struct TrainOutcome<T: Float> {
    pub records: Vec<MetricsRecord>,
    pub best_epoch: usize,
    pub best_dev_accuracy: f64,
    /// Parameters and optimizer state at the end of the best epoch.
    pub best_params: ParamStore<T>,
    pub best_adam: Adam<T>,
    pub stopped_early: bool,
}

/// Owns the model and optimizer for one run over borrowed data.
pub struct Trainer<'d, T: Float> {
    pub plan: TrainPlan,
    pub model: Model<T>,
    pub adam: Adam<T>,
    data: &'d Datasets,
    trainable: Vec<ParamId>,
    pub step: u64,
    pub epoch: usize,
}

impl<'d, T: Float> Trainer<'d, T> {
    pub fn new(plan: TrainPlan, model: Model<T>, data: &'d Datasets) -> Result<Self> {
        plan.validate()?;
        check_data(&model, plan.mode, data)?;
        let adam = Adam::new(plan.adam.clone(), &model.store);
        let trainable = model.trainable(plan.mode);
        Ok(Self { plan, model, adam, data, trainable, step: 0, epoch: 0 })
    }

    /// One forward/backward/update on the given rows.
    fn train_step(&mut self, pol: Option<&[usize]>, subj: Option<&[usize]>, tallies: &mut [TaskTally; 2]) -> Result<()> {
        let pb = pol.map(|i| self.data.require(Task::Pol)?.batch::<T>(i)).transpose()?;
        let sb = subj.map(|i| self.data.require(Task::Subj)?.batch::<T>(i)).transpose()?;
        let pass = Pass::Train { seed: self.plan.seed, step: self.step };
        let (epoch, step, lr) = (self.epoch, self.step, self.plan.adam.lr);
        let diagnose = move |e: Error| match e {
            Error::Numerical(msg) => Error::Numerical(format!(
                "{msg} (epoch {epoch}, step {step}); try a learning rate below {lr} or enable gradient clipping"
            )),
            other => other,
        };
        let grads = {
            let mut tape = Tape::new();
            let out = self
                .model
                .forward(&mut tape, self.plan.mode, pb.as_ref(), sb.as_ref(), pass)
                .map_err(diagnose)?;
            let loss = tape.value(out.loss).item().as_f64();
            if !loss.is_finite() {
                return Err(diagnose(Error::Numerical(format!("loss is {loss}"))));
            }
            for (task, batch) in [(Task::Pol, &pb), (Task::Subj, &sb)] {
                if let (Some(tf), Some(batch)) = (out.task(task), batch) {
                    let preds = predict(tape.value(tf.probs));
                    tallies[task as usize].record(tape.value(tf.loss).item().as_f64(), batch, &preds);
                }
            }
            tape.backward(out.loss).map_err(diagnose)?
        };
        self.model.store.zero_grads();
        self.model.store.accumulate(&grads);
        self.adam.step(&mut self.model.store, &self.trainable)?;
        self.step += 1;
        Ok(())
    }

    /// Trains one epoch and evaluates on dev. Returns the train rows followed
    /// by the dev rows.
    pub fn train_epoch(&mut self) -> Result<Vec<MetricsRecord>> {
        self.epoch += 1;
        let e = (self.epoch - 1) as u64;
        let (mode, bs, seed) = (self.plan.mode, self.plan.batch_size, self.plan.seed);
        let mut tallies = [TaskTally::default(), TaskTally::default()];
        match mode {
            Mode::Mtl => {
                let pol = self.data.require(Task::Pol)?.split(SplitName::Train).to_vec();
                let subj = self.data.require(Task::Subj)?.split(SplitName::Train).to_vec();
                for (p, s) in make_mtl_batches(&pol, &subj, bs, seed, e)? {
                    self.train_step(Some(&p), Some(&s), &mut tallies)?;
                }
            }
            Mode::SinglePol | Mode::SingleSubj => {
                let task = mode.tasks()[0];
                let split = self.data.require(task)?.split(SplitName::Train).to_vec();
                for b in make_batches(&split, bs, seed, task, e)? {
                    match task {
                        Task::Pol => self.train_step(Some(&b), None, &mut tallies)?,
                        Task::Subj => self.train_step(None, Some(&b), &mut tallies)?,
                    }
                }
            }
        }
        let mut records = Vec::new();
        for &task in mode.tasks() {
            let t = &tallies[task as usize];
            records.push(MetricsRecord {
                epoch: self.epoch,
                split: SplitName::Train,
                task,
                loss: t.loss_sum / t.rows as f64,
                accuracy: t.correct as f64 / t.rows as f64,
            });
        }
        let dev = self.evaluate(SplitName::Dev)?;
        for t in &dev.tasks {
            records.push(MetricsRecord {
                epoch: self.epoch,
                split: SplitName::Dev,
                task: t.task,
                loss: t.loss,
                accuracy: t.accuracy(),
            });
        }
        for r in &records {
            debug!("epoch {} {} {}: loss {:.4} acc {:.4}", r.epoch, r.split, r.task, r.loss, r.accuracy);
        }
        Ok(records)
    }

    pub fn evaluate(&self, split: SplitName) -> Result<Evaluation> {
        evaluate(&self.model, self.plan.mode, self.data, split, self.plan.eval_batch_size)
    }

    /// Runs every epoch of the plan, tracking the best dev accuracy.
    pub fn fit(&mut self, mut on_epoch: impl FnMut(&[MetricsRecord])) -> Result<TrainOutcome<T>> {
        let mut outcome = TrainOutcome {
            records: Vec::new(),
            best_epoch: 0,
            best_dev_accuracy: f64::NEG_INFINITY,
            best_params: self.model.store.clone(),
            best_adam: self.adam.clone(),
            stopped_early: false,
        };
        while self.epoch < self.plan.epochs {
            let records = self.train_epoch()?;
            on_epoch(&records);
            let dev: Vec<f64> = records.iter().filter(|r| r.split == SplitName::Dev).map(|r| r.accuracy).collect();
            let dev_acc = dev.iter().sum::<f64>() / dev.len() as f64;
            info!("epoch {}/{}: mean dev accuracy {:.4}", self.epoch, self.plan.epochs, dev_acc);
            outcome.records.extend(records);
            if dev_acc > outcome.best_dev_accuracy {
                outcome.best_dev_accuracy = dev_acc;
                outcome.best_epoch = self.epoch;
                outcome.best_params = self.model.store.clone();
                outcome.best_adam = self.adam.clone();
            } else if let Some(p) = self.plan.patience {
                if self.epoch - outcome.best_epoch >= p {
                    outcome.stopped_early = true;
                    break;
                }
            }
        }
        Ok(outcome)
    }
}

/// Accuracy, mean loss, and confusion matrix per task on `split`, dropout off.
///
/// In multitask mode every prediction still needs a partner sentence for the
/// fusion layer: row `i` of one task is paired with row `i mod n` of the
/// other task's split, both in split order.
pub fn evaluate<T: Float>(
    model: &Model<T>,
    mode: Mode,
    data: &Datasets,
    split: SplitName,
    batch_size: usize,
) -> Result<Evaluation> {
    let mut rows = [Vec::new(), Vec::new()];
    for &task in mode.tasks() {
        rows[task as usize] = data.require(task)?.split(split).to_vec();
        if rows[task as usize].is_empty() {
            return Err(Error::Data(format!("{task} {split} split is empty")));
        }
    }
    let total = mode.tasks().iter().map(|&t| rows[t as usize].len()).max().unwrap_or(0);
    let mut conf = [ConfusionMatrix::default(); 2];
    let mut loss = [0.0f64; 2];
    let mut start = 0;
    while start < total {
        let end = (start + batch_size.max(1)).min(total);
        let pick = |task: Task| -> Result<Option<EncodedBatch<T>>> {
            if !mode.uses(task) {
                return Ok(None);
            }
            let r = &rows[task as usize];
            let idx: Vec<usize> = (start..end).map(|i| r[i % r.len()]).collect();
            data.require(task)?.batch(&idx).map(Some)
        };
        let (pb, sb) = (pick(Task::Pol)?, pick(Task::Subj)?);
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, mode, pb.as_ref(), sb.as_ref(), Pass::Eval)?;
        for (task, batch) in [(Task::Pol, &pb), (Task::Subj, &sb)] {
            let (Some(tf), Some(batch)) = (out.task(task), batch) else { continue };
            let n = rows[task as usize].len();
            let probs = tape.value(tf.probs);
            let preds = predict(probs);
            for (j, (&p, &y)) in preds.iter().zip(&batch.labels).enumerate() {
                if start + j >= n {
                    break;
                }
                conf[task as usize].record(y, p);
                let p_true = probs.data()[j * 2 + y].as_f64().max(LOG_FLOOR);
                loss[task as usize] -= p_true.ln();
            }
        }
        start = end;
    }
    let tasks = mode
        .tasks()
        .iter()
        .map(|&task| TaskEvaluation {
            task,
            loss: loss[task as usize] / rows[task as usize].len() as f64,
            confusion: conf[task as usize],
        })
        .collect();
    Ok(Evaluation { split, tasks })
}
