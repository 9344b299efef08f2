//! The full two-task model: parameter registration, forward pass per mode, and
//! the trainable-parameter ledger.

use std::fmt;
use std::str::FromStr;

use crate::data::{EncodedBatch, Task, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::fusion::{check_loss_weights, classify_head, cross_entropy, joint_loss, ntn_fuse, HeadParams, NtnParams};
use crate::layers::{Activation, EncoderConfig, Phase, TaskEncoderParams};
use crate::rng;
use crate::tensor::{Float, ParamId, ParamStore, Tape, Tensor, Var};

/// Which networks are trained and how the loss is formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    SinglePol,
    SingleSubj,
    Mtl,
}

impl Mode {
    pub fn tasks(self) -> &'static [Task] {
        match self {
            Mode::SinglePol => &[Task::Pol],
            Mode::SingleSubj => &[Task::Subj],
            Mode::Mtl => &[Task::Pol, Task::Subj],
        }
    }

    pub fn single(task: Task) -> Self {
        match task {
            Task::Pol => Mode::SinglePol,
            Task::Subj => Mode::SingleSubj,
        }
    }

    pub fn uses(self, task: Task) -> bool {
        self.tasks().contains(&task)
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::SinglePol => "single-pol",
            Mode::SingleSubj => "single-subj",
            Mode::Mtl => "mtl",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single-pol" => Ok(Mode::SinglePol),
            "single-subj" => Ok(Mode::SingleSubj),
            "mtl" => Ok(Mode::Mtl),
            other => Err(Error::Config(format!("unknown mode {other:?} (single-pol|single-subj|mtl)"))),
        }
    }
}

/// Where the encoder input vectors come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingKind {
    /// Trainable per-task lookup table, optionally seeded from GloVe vectors.
    Glove,
    /// Frozen precomputed vectors read from MTSS files.
    BertFile,
}

impl EmbeddingKind {
    pub fn name(self) -> &'static str {
        match self {
            EmbeddingKind::Glove => "glove",
            EmbeddingKind::BertFile => "bert-file",
        }
    }
}

impl fmt::Display for EmbeddingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EmbeddingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "glove" => Ok(EmbeddingKind::Glove),
            "bert-file" | "bert" => Ok(EmbeddingKind::BertFile),
            other => Err(Error::Config(format!("unknown embedding {other:?} (glove|bert-file)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub embedding: EmbeddingKind,
    pub d_emb: usize,
    /// Vocabulary sizes including the two reserved ids (GloVe mode only).
    pub vocab_pol: usize,
    pub vocab_subj: usize,
    pub max_len_pol: usize,
    pub max_len_subj: usize,
    pub hidden: usize,
    pub d_f: usize,
    pub d_a: usize,
    pub d_t: usize,
    pub d_ntn: usize,
    pub dropout: f64,
    pub activation: Activation,
    pub attention_mask: bool,
    /// Replace the NTN output by zeros, decoupling the two tasks.
    pub ntn_ablate: bool,
    pub w_pol: f64,
    pub w_subj: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embedding: EmbeddingKind::Glove,
            d_emb: 300,
            vocab_pol: 2,
            vocab_subj: 2,
            max_len_pol: 40,
            max_len_subj: 85,
            hidden: 128,
            d_f: 100,
            d_a: 64,
            d_t: 64,
            d_ntn: 32,
            dropout: 0.3,
            activation: Activation::Tanh,
            attention_mask: true,
            ntn_ablate: false,
            w_pol: 1.0,
            w_subj: 1.0,
        }
    }
}

impl ModelConfig {
    /// The gradient-check configuration: every width 2, length 3.
    pub fn tiny(embedding: EmbeddingKind) -> Self {
        Self {
            embedding,
            d_emb: 2,
            vocab_pol: 6,
            vocab_subj: 6,
            max_len_pol: 3,
            max_len_subj: 3,
            hidden: 2,
            d_f: 2,
            d_a: 2,
            d_t: 2,
            d_ntn: 2,
            dropout: 0.0,
            ..Self::default()
        }
    }

    pub fn max_len(&self, task: Task) -> usize {
        match task {
            Task::Pol => self.max_len_pol,
            Task::Subj => self.max_len_subj,
        }
    }

    pub fn vocab(&self, task: Task) -> usize {
        match task {
            Task::Pol => self.vocab_pol,
            Task::Subj => self.vocab_subj,
        }
    }

    pub fn encoder(&self, task: Task) -> EncoderConfig {
        EncoderConfig {
            vocab_size: (self.embedding == EmbeddingKind::Glove).then(|| self.vocab(task)),
            d_in: self.d_emb,
            max_len: self.max_len(task),
            hidden: self.hidden,
            d_f: self.d_f,
            d_a: self.d_a,
            d_t: self.d_t,
            dropout: self.dropout,
            activation: self.activation,
            attention_mask: self.attention_mask,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_emb", self.d_emb),
            ("max_len_pol", self.max_len_pol),
            ("max_len_subj", self.max_len_subj),
            ("hidden", self.hidden),
            ("d_f", self.d_f),
            ("d_a", self.d_a),
            ("d_t", self.d_t),
            ("d_ntn", self.d_ntn),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.embedding == EmbeddingKind::Glove && (self.vocab_pol < 2 || self.vocab_subj < 2) {
            return Err(Error::Config("vocabulary sizes must include the pad and unk ids".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        check_loss_weights(self.w_subj, self.w_pol)
    }
}

/// How a forward pass treats dropout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pass {
    /// Dropout on, masks drawn from a stream keyed by `(seed, task, step)`.
    Train { seed: u64, step: u64 },
    Eval,
}

impl Pass {
    fn phase(self) -> Phase {
        match self {
            Pass::Train { .. } => Phase::Train,
            Pass::Eval => Phase::Eval,
        }
    }
}

/// One task's outputs from [`Model::forward`].
#[derive(Clone, Copy, Debug)]
pub struct TaskForward {
    pub probs: Var,
    pub loss: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct Forward {
    /// Scalar objective for the mode.
    pub loss: Var,
    pub pol: Option<TaskForward>,
    pub subj: Option<TaskForward>,
}

impl Forward {
    pub fn task(&self, task: Task) -> Option<TaskForward> {
        match task {
            Task::Pol => self.pol,
            Task::Subj => self.subj,
        }
    }
}

/// Every parameter of both task networks, the NTN, and both heads. The set is
/// the same in every mode; the mode decides what is trained and run.
#[derive(Clone, Debug)]
pub struct Model<T: Float> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub pol: TaskEncoderParams,
    pub subj: TaskEncoderParams,
    pub ntn: NtnParams,
    pub pol_head: HeadParams,
    pub subj_head: HeadParams,
}

impl<T: Float> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let pol = TaskEncoderParams::register(
            &mut store,
            "pol",
            &config.encoder(Task::Pol),
            &mut rng::stream(seed, "init.pol", 0),
        )?;
        let subj = TaskEncoderParams::register(
            &mut store,
            "subj",
            &config.encoder(Task::Subj),
            &mut rng::stream(seed, "init.subj", 0),
        )?;
        let ntn = NtnParams::register(&mut store, config.d_a, config.d_ntn, &mut rng::stream(seed, "init.ntn", 0))?;
        let pol_head = HeadParams::register(&mut store, "pol", config.d_t, config.d_ntn)?;
        let subj_head = HeadParams::register(&mut store, "subj", config.d_t, config.d_ntn)?;
        Ok(Self { config, store, pol, subj, ntn, pol_head, subj_head })
    }

    pub fn encoder(&self, task: Task) -> &TaskEncoderParams {
        match task {
            Task::Pol => &self.pol,
            Task::Subj => &self.subj,
        }
    }

    pub fn head(&self, task: Task) -> &HeadParams {
        match task {
            Task::Pol => &self.pol_head,
            Task::Subj => &self.subj_head,
        }
    }

    /// Tensors updated by the optimizer in `mode`.
    pub fn trainable(&self, mode: Mode) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for &task in mode.tasks() {
            ids.extend(self.encoder(task).ids());
            ids.extend(self.head(task).ids());
        }
        if mode == Mode::Mtl {
            ids.extend(self.ntn.ids());
        }
        ids
    }

    /// Trainable scalar count. Single-task heads only see `X`, so the rows of
    /// the head weight that read the NTN output are not counted there.
    pub fn count_parameters(&self, mode: Mode) -> usize {
        let total = self.store.count(&self.trainable(mode));
        match mode {
            Mode::Mtl => total,
            _ => total - self.config.d_ntn * NUM_CLASSES,
        }
    }

    /// Embedding table of a task, if the model learns one.
    pub fn embedding(&self, task: Task) -> Option<ParamId> {
        self.encoder(task).embedding
    }

    /// Replaces a task's embedding table (e.g. with GloVe vectors).
    pub fn set_embedding(&mut self, task: Task, table: Tensor<T>) -> Result<()> {
        let id = self
            .embedding(task)
            .ok_or_else(|| Error::Usage("model has no embedding table".into()))?;
        let current = self.store.value(id).shape();
        if current != table.shape() {
            return Err(Error::dim("set_embedding", current, table.shape()));
        }
        *self.store.value_mut(id) = table;
        Ok(())
    }

    pub fn cast<U: Float>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            store: self.store.cast(),
            pol: self.pol.clone(),
            subj: self.subj.clone(),
            ntn: self.ntn,
            pol_head: self.pol_head,
            subj_head: self.subj_head,
        }
    }

    /// Builds the graph for one step. Single-task modes need only their own
    /// batch; MTL needs both, of equal batch size, paired row by row.
    pub fn forward<'a>(
        &'a self,
        tape: &mut Tape<'a, T>,
        mode: Mode,
        pol: Option<&EncodedBatch<T>>,
        subj: Option<&EncodedBatch<T>>,
        pass: Pass,
    ) -> Result<Forward> {
        self.forward_with(&self.store, tape, mode, pol, subj, pass)
    }

    /// [`Model::forward`] reading parameter values from `store`, which must
    /// share this model's layout (used when perturbing a copy of the store).
    pub fn forward_with<'a>(
        &self,
        store: &'a ParamStore<T>,
        tape: &mut Tape<'a, T>,
        mode: Mode,
        pol: Option<&EncodedBatch<T>>,
        subj: Option<&EncodedBatch<T>>,
        pass: Pass,
    ) -> Result<Forward> {
        let batch_for = |task: Task| -> Result<&EncodedBatch<T>> {
            let b = match task {
                Task::Pol => pol,
                Task::Subj => subj,
            };
            let b = b.ok_or_else(|| Error::Usage(format!("mode {mode} needs a {task} batch")))?;
            if b.task != task {
                return Err(Error::Usage(format!("{} batch passed as {task}", b.task)));
            }
            Ok(b)
        };
        let phase = pass.phase();
        let encode = |tape: &mut Tape<'a, T>, task: Task| {
            let batch = batch_for(task)?;
            let label = match task {
                Task::Pol => "dropout.pol",
                Task::Subj => "dropout.subj",
            };
            let mut r = match pass {
                Pass::Train { seed, step } => rng::stream(seed, label, step),
                Pass::Eval => rng::stream(0, label, 0),
            };
            let out = self
                .encoder(task)
                .encode(tape, store, batch, &self.config.encoder(task), phase, &mut r)?;
            Ok::<_, Error>((out, batch))
        };

        match mode {
            Mode::SinglePol | Mode::SingleSubj => {
                let task = mode.tasks()[0];
                let (enc, batch) = encode(tape, task)?;
                let probs = classify_head(tape, store, enc.x, None, self.head(task))?;
                let onehot = tape.constant(batch.one_hot());
                let loss = cross_entropy(tape, probs, onehot)?;
                let tf = Some(TaskForward { probs, loss });
                Ok(match task {
                    Task::Pol => Forward { loss, pol: tf, subj: None },
                    Task::Subj => Forward { loss, pol: None, subj: tf },
                })
            }
            Mode::Mtl => {
                let (ep, bp) = encode(tape, Task::Pol)?;
                let (es, bs) = encode(tape, Task::Subj)?;
                if bp.batch != bs.batch {
                    return Err(Error::dim("mtl pairing", &[bp.batch], &[bs.batch]));
                }
                let n = if self.config.ntn_ablate {
                    tape.constant(Tensor::zeros(&[bp.batch, self.config.d_ntn]))
                } else {
                    ntn_fuse(tape, store, es.fn_, ep.fn_, &self.ntn)?
                };
                let task_out = |tape: &mut Tape<'a, T>, x: Var, batch: &EncodedBatch<T>, head: &HeadParams| {
                    let probs = classify_head(tape, store, x, Some(n), head)?;
                    let onehot = tape.constant(batch.one_hot());
                    let loss = cross_entropy(tape, probs, onehot)?;
                    Ok::<_, Error>(TaskForward { probs, loss })
                };
                let pol = task_out(tape, ep.x, bp, &self.pol_head)?;
                let subj = task_out(tape, es.x, bs, &self.subj_head)?;
                let loss = joint_loss(tape, subj.loss, pol.loss, self.config.w_subj, self.config.w_pol)?;
                Ok(Forward { loss, pol: Some(pol), subj: Some(subj) })
            }
        }
    }
}
