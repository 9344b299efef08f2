//! The 64-bit finite-difference suite behind `mtss gradcheck`: one row per
//! differentiable op or layer, plus the tiny end-to-end model in each mode.

use rand::Rng;

use crate::data::{BatchInputs, EncodedBatch, Task};
use crate::error::Result;
use crate::fusion::{classify_head, cross_entropy, joint_loss, ntn_fuse, HeadParams, NtnParams};
use crate::layers::{
    bilstm_forward, dropout, lstm_cell_step, self_attention, time_distributed_fc, Activation, Attention, Dense,
    EncoderConfig, LstmParams, Phase, TaskEncoderParams,
};
use crate::model::{EmbeddingKind, Mode, Model, ModelConfig, Pass};
use crate::rng;
use crate::tensor::{grad_check, ParamStore, Tape, Tensor, Var};

/// Pass threshold for composite cases (encoder, full model).
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Pass threshold for single ops and layers.
pub const LAYER_TOLERANCE: f64 = 1e-5;

pub type LossFn = Box<dyn for<'t> Fn(&mut Tape<'t, f64>, &'t ParamStore<f64>) -> Result<Var>>;

/// A parameter store and the scalar function to differentiate through it.
pub struct GradCase {
    pub name: String,
    pub tolerance: f64,
    pub store: ParamStore<f64>,
    pub loss: LossFn,
}

impl GradCase {
    pub fn new(
        name: impl Into<String>,
        store: ParamStore<f64>,
        loss: impl for<'t> Fn(&mut Tape<'t, f64>, &'t ParamStore<f64>) -> Result<Var> + 'static,
    ) -> Self {
        Self { name: name.into(), tolerance: LAYER_TOLERANCE, store, loss: Box::new(loss) }
    }

    pub fn composite(mut self) -> Self {
        self.tolerance = GRADCHECK_TOLERANCE;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradRow {
    pub name: String,
    pub tolerance: f64,
    pub max_rel_error: f64,
    pub coordinates: usize,
    pub worst: Option<(String, usize)>,
    pub worst_values: (f64, f64),
    pub rounding_adjusted_error: f64,
    /// Set when building or differentiating the case failed outright.
    pub error: Option<String>,
}

impl GradRow {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.max_rel_error < self.tolerance
    }
}

pub fn run_case(mut case: GradCase) -> GradRow {
    match grad_check(&mut case.store, &*case.loss) {
        Ok(r) => GradRow {
            name: case.name,
            tolerance: case.tolerance,
            max_rel_error: r.max_rel_error,
            coordinates: r.coordinates,
            worst: r.worst,
            worst_values: r.worst_values,
            rounding_adjusted_error: r.max_rounding_adjusted_error,
            error: None,
        },
        Err(e) => GradRow {
            name: case.name,
            tolerance: case.tolerance,
            max_rel_error: f64::INFINITY,
            coordinates: 0,
            worst: None,
            worst_values: (f64::NAN, f64::NAN),
            rounding_adjusted_error: f64::INFINITY,
            error: Some(e.to_string()),
        },
    }
}

/// Reduces any output to a scalar with fixed pseudo-random weights, so that
/// every output coordinate carries a distinct upstream gradient.
pub fn probe<'t>(tape: &mut Tape<'t, f64>, v: Var, seed: u64) -> Result<Var> {
    let mut r = rng::stream(seed, "gradcheck.probe", 0);
    let shape = tape.shape(v).to_vec();
    let w = tape.constant(Tensor::from_fn(&shape, |_| r.gen_range(-1.0..1.0)));
    let p = tape.mul(v, w)?;
    tape.sum(p)
}

fn uniform(r: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| r.gen_range(-scale..scale))
}

/// Redraws every parameter uniformly in `±scale`, overriding zero inits.
pub fn randomize(store: &mut ParamStore<f64>, seed: u64, scale: f64) {
    let mut r = rng::stream(seed, "gradcheck.params", 0);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.value_mut(id).data_mut() {
            *v = r.gen_range(-scale..scale);
        }
    }
}

fn store_of(tensors: Vec<(&str, Tensor<f64>)>) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    for (name, t) in tensors {
        s.add(name, t).expect("distinct names");
    }
    s
}

/// Token batch with a fixed mask pattern: row `b` has `L - (b % L)` real tokens.
pub fn tiny_token_batch(task: Task, batch: usize, max_len: usize, vocab: usize, seed: u64) -> EncodedBatch<f64> {
    let mut r = rng::stream(seed, "gradcheck.batch", task as u64);
    let mut ids = Vec::new();
    let mut mask = Vec::new();
    for b in 0..batch {
        let real = max_len - (b % max_len);
        for t in 0..max_len {
            let on = t < real;
            mask.push(on as u8);
            ids.push(if on { r.gen_range(1..vocab) } else { 0 });
        }
    }
    EncodedBatch {
        task,
        batch,
        max_len,
        inputs: BatchInputs::Tokens(ids),
        mask,
        labels: (0..batch).map(|b| (b + task as usize) % 2).collect(),
    }
}

/// Same as [`tiny_token_batch`] with precomputed vectors; pad rows are zero.
pub fn tiny_embedding_batch(task: Task, batch: usize, max_len: usize, dim: usize, seed: u64) -> EncodedBatch<f64> {
    let tokens = tiny_token_batch(task, batch, max_len, 2, seed);
    let mut r = rng::stream(seed, "gradcheck.emb", task as u64);
    let mut e = Tensor::zeros(&[batch, max_len, dim]);
    for (i, row) in e.data_mut().chunks_mut(dim).enumerate() {
        if tokens.mask[i] != 0 {
            row.iter_mut().for_each(|v| *v = r.gen_range(-1.0..1.0));
        }
    }
    EncodedBatch { inputs: BatchInputs::Embeddings(e), ..tokens }
}

fn op_cases(seed: u64) -> Vec<GradCase> {
    let mut r = rng::stream(seed, "gradcheck.ops", 0);
    let mut cases = Vec::new();

    let s = store_of(vec![("a", uniform(&mut r, &[3, 4], 1.0)), ("b", uniform(&mut r, &[4, 2], 1.0))]);
    cases.push(GradCase::new("matmul", s, |t, s| {
        let (a, b) = (t.param(s, s.id("a").unwrap()), t.param(s, s.id("b").unwrap()));
        let y = t.matmul(a, b)?;
        probe(t, y, 1)
    }));

    let s = store_of(vec![("a", uniform(&mut r, &[2, 3, 4], 1.0)), ("b", uniform(&mut r, &[2, 4, 2], 1.0))]);
    cases.push(GradCase::new("bmm", s, |t, s| {
        let (a, b) = (t.param(s, s.id("a").unwrap()), t.param(s, s.id("b").unwrap()));
        let y = t.bmm(a, b)?;
        probe(t, y, 2)
    }));

    let s = store_of(vec![("a", uniform(&mut r, &[3, 4], 1.0)), ("b", uniform(&mut r, &[3, 4], 1.0))]);
    cases.push(GradCase::new("add/mul", s, |t, s| {
        let (a, b) = (t.param(s, s.id("a").unwrap()), t.param(s, s.id("b").unwrap()));
        let y = t.add(a, b)?;
        let y = t.mul(y, a)?;
        probe(t, y, 3)
    }));

    let s = store_of(vec![
        ("x", uniform(&mut r, &[2, 3, 4], 1.0)),
        ("b", uniform(&mut r, &[4], 1.0)),
        ("w", uniform(&mut r, &[4], 1.0)),
    ]);
    cases.push(GradCase::new("add_row_bias/mul_row/scale", s, |t, s| {
        let x = t.param(s, s.id("x").unwrap());
        let b = t.param(s, s.id("b").unwrap());
        let w = t.param(s, s.id("w").unwrap());
        let y = t.add_row_bias(x, b)?;
        let y = t.mul_row(y, w)?;
        let y = t.scale(y, -1.7)?;
        probe(t, y, 4)
    }));

    let s = store_of(vec![("x", uniform(&mut r, &[3, 5], 2.0))]);
    cases.push(GradCase::new("tanh", s, |t, s| {
        let x = t.param(s, s.id("x").unwrap());
        let y = t.tanh(x)?;
        probe(t, y, 5)
    }));

    let s = store_of(vec![("x", uniform(&mut r, &[3, 5], 3.0))]);
    cases.push(GradCase::new("sigmoid", s, |t, s| {
        let x = t.param(s, s.id("x").unwrap());
        let y = t.sigmoid(x)?;
        probe(t, y, 6)
    }));

    // keep every input clear of the kink at zero
    let relu_in = Tensor::from_fn(&[3, 4], |i| if i % 2 == 0 { 0.3 + 0.1 * i as f64 } else { -0.2 - 0.05 * i as f64 });
    cases.push(GradCase::new("relu", store_of(vec![("x", relu_in)]), |t, s| {
        let x = t.param(s, s.id("x").unwrap());
        let y = t.relu(x)?;
        probe(t, y, 7)
    }));

    let s = store_of(vec![("x", uniform(&mut r, &[4, 5], 3.0))]);
    cases.push(GradCase::new("softmax_rows", s, |t, s| {
        let x = t.param(s, s.id("x").unwrap());
        let y = t.softmax_rows(x)?;
        probe(t, y, 8)
    }));

    let s = store_of(vec![("a", uniform(&mut r, &[2, 3], 1.0)), ("b", uniform(&mut r, &[2, 2], 1.0))]);
    cases.push(GradCase::new("concat/slice/reshape/flatten", s, |t, s| {
        let (a, b) = (t.param(s, s.id("a").unwrap()), t.param(s, s.id("b").unwrap()));
        let c = t.concat(&[a, b], 1)?;
        let c = t.slice(c, 1, 1, 3)?;
        let c = t.reshape(c, &[3, 2])?;
        let c = t.flatten(c)?;
        let c2 = t.mul(c, c)?;
        probe(t, c2, 9)
    }));

    let probs = Tensor::from_fn(&[3, 2], |i| 0.1 + 0.13 * i as f64);
    cases.push(GradCase::new("log_clamped/sum", store_of(vec![("p", probs)]), |t, s| {
        let p = t.param(s, s.id("p").unwrap());
        let y = t.log_clamped(p, 1e-12)?;
        let y = t.mul(y, p)?;
        t.sum(y)
    }));

    let s = store_of(vec![("table", uniform(&mut r, &[5, 3], 1.0))]);
    cases.push(GradCase::new("gather_rows", s, |t, s| {
        let table = t.param(s, s.id("table").unwrap());
        let y = t.gather_rows(table, &[1, 4, 1, 0, 3])?;
        probe(t, y, 10)
    }));

    let s = store_of(vec![
        ("s1", uniform(&mut r, &[2, 3], 1.0)),
        ("t", uniform(&mut r, &[2, 3, 4], 1.0)),
        ("s2", uniform(&mut r, &[2, 4], 1.0)),
    ]);
    cases.push(GradCase::new("bilinear", s, |t, s| {
        let s1 = t.param(s, s.id("s1").unwrap());
        let tt = t.param(s, s.id("t").unwrap());
        let s2 = t.param(s, s.id("s2").unwrap());
        let y = t.bilinear(s1, tt, s2)?;
        probe(t, y, 11)
    }));
    cases
}

fn layer_cases(seed: u64) -> Result<Vec<GradCase>> {
    let mut cases = Vec::new();
    let mut r = rng::stream(seed, "gradcheck.layers", 0);

    let mut s = ParamStore::new();
    let p = LstmParams::register(&mut s, "lstm", 3, 2, &mut r)?;
    s.add("x", uniform(&mut r, &[2, 3], 1.0))?;
    s.add("h", uniform(&mut r, &[2, 2], 1.0))?;
    s.add("c", uniform(&mut r, &[2, 2], 1.0))?;
    randomize(&mut s, seed ^ 1, 0.8);
    cases.push(GradCase::new("lstm_cell_step", s, move |t, s| {
        let bound = p.bind(t, s);
        let x = t.param(s, s.id("x").unwrap());
        let h = t.param(s, s.id("h").unwrap());
        let c = t.param(s, s.id("c").unwrap());
        let (h1, c1) = lstm_cell_step(t, &bound, x, h, c)?;
        let both = t.concat(&[h1, c1], 1)?;
        probe(t, both, 12)
    }));

    let mut s = ParamStore::new();
    let fwd = LstmParams::register(&mut s, "fwd", 2, 2, &mut r)?;
    let bwd = LstmParams::register(&mut s, "bwd", 2, 2, &mut r)?;
    s.add("e", uniform(&mut r, &[2, 3, 2], 1.0))?;
    randomize(&mut s, seed ^ 2, 0.8);
    cases.push(GradCase::new("bilstm_forward", s, move |t, s| {
        let (f, b) = (fwd.bind(t, s), bwd.bind(t, s));
        let e = t.param(s, s.id("e").unwrap());
        let y = bilstm_forward(t, e, &f, &b)?;
        probe(t, y, 13)
    }));

    let mut s = ParamStore::new();
    let td = Dense::register(&mut s, "td", 4, 3, &mut r)?;
    s.add("h", uniform(&mut r, &[2, 3, 4], 1.0))?;
    randomize(&mut s, seed ^ 3, 0.8);
    cases.push(GradCase::new("time_distributed_fc", s, move |t, s| {
        let h = t.param(s, s.id("h").unwrap());
        let y = time_distributed_fc(t, s, h, &td, Activation::Tanh)?;
        probe(t, y, 14)
    }));

    let s = store_of(vec![("x", uniform(&mut r, &[4, 5], 1.0))]);
    cases.push(GradCase::new("dropout (train, fixed mask)", s, |t, s| {
        let x = t.param(s, s.id("x").unwrap());
        let y = dropout(t, x, 0.4, Phase::Train, &mut rng::stream(7, "gradcheck.dropout", 0))?;
        probe(t, y, 15)
    }));

    for use_mask in [true, false] {
        let mut s = ParamStore::new();
        let att = Attention {
            w_att: s.add("att.w", uniform(&mut r, &[3, 1], 1.0))?,
            w_alpha: s.add("att.alpha", uniform(&mut r, &[4, 4], 1.0))?,
        };
        s.add("f", uniform(&mut r, &[8, 3], 1.0))?;
        let name = if use_mask { "self_attention (masked)" } else { "self_attention (unmasked)" };
        cases.push(GradCase::new(name, s, move |t, s| {
            let f = t.param(s, s.id("f").unwrap());
            let (pooled, alpha) = self_attention(t, s, f, &[1, 1, 1, 0, 1, 1, 0, 0], &att, use_mask)?;
            let a = probe(t, pooled, 16)?;
            let b = probe(t, alpha, 17)?;
            t.add(a, b)
        }));
    }

    let mut s = ParamStore::new();
    let ntn = NtnParams::register(&mut s, 3, 2, &mut r)?;
    s.add("s1", uniform(&mut r, &[2, 3], 1.0))?;
    s.add("s2", uniform(&mut r, &[2, 3], 1.0))?;
    randomize(&mut s, seed ^ 4, 0.8);
    cases.push(GradCase::new("ntn_fuse", s, move |t, s| {
        let s1 = t.param(s, s.id("s1").unwrap());
        let s2 = t.param(s, s.id("s2").unwrap());
        let y = ntn_fuse(t, s, s1, s2, &ntn)?;
        probe(t, y, 18)
    }));

    let mut s = ParamStore::new();
    let head = HeadParams::register(&mut s, "h", 3, 2)?;
    s.add("x", uniform(&mut r, &[4, 3], 1.0))?;
    s.add("n", uniform(&mut r, &[4, 2], 1.0))?;
    randomize(&mut s, seed ^ 5, 0.8);
    cases.push(GradCase::new("classify_head + cross_entropy", s, move |t, s| {
        let x = t.param(s, s.id("x").unwrap());
        let n = t.param(s, s.id("n").unwrap());
        let with_n = classify_head(t, s, x, Some(n), &head)?;
        let without = classify_head(t, s, x, None, &head)?;
        let y = t.constant(Tensor::from_f64(&[4, 2], &[1., 0., 0., 1., 0., 1., 1., 0.])?);
        let j1 = cross_entropy(t, with_n, y)?;
        let j2 = cross_entropy(t, without, y)?;
        joint_loss(t, j1, j2, 0.7, 1.3)
    }));

    let cfg = EncoderConfig {
        vocab_size: Some(6),
        d_in: 2,
        max_len: 3,
        hidden: 2,
        d_f: 2,
        d_a: 2,
        d_t: 2,
        dropout: 0.0,
        activation: Activation::Tanh,
        attention_mask: true,
    };
    let mut s = ParamStore::new();
    let enc = TaskEncoderParams::register(&mut s, "pol", &cfg, &mut r)?;
    randomize(&mut s, seed ^ 6, 0.8);
    let batch = tiny_token_batch(Task::Pol, 3, 3, 6, seed);
    cases.push(GradCase::new("task_encode", s, move |t, s| {
        let out = enc.encode(t, s, &batch, &cfg, Phase::Eval, &mut rng::stream(0, "unused", 0))?;
        let a = probe(t, out.fn_, 19)?;
        let b = probe(t, out.x, 20)?;
        t.add(a, b)
    }).composite());
    Ok(cases)
}

/// The tiny end-to-end model with every parameter randomized.
pub fn tiny_model(embedding: EmbeddingKind, seed: u64) -> Result<Model<f64>> {
    let mut model = Model::<f64>::new(ModelConfig::tiny(embedding), seed)?;
    randomize(&mut model.store, seed, 0.8);
    Ok(model)
}

fn model_cases(seed: u64) -> Result<Vec<GradCase>> {
    let mut cases = Vec::new();
    for (embedding, mode) in [
        (EmbeddingKind::Glove, Mode::Mtl),
        (EmbeddingKind::BertFile, Mode::Mtl),
        (EmbeddingKind::Glove, Mode::SinglePol),
        (EmbeddingKind::Glove, Mode::SingleSubj),
    ] {
        let model = tiny_model(embedding, seed)?;
        let cfg = &model.config;
        let batch = |task| match embedding {
            EmbeddingKind::Glove => tiny_token_batch(task, 3, cfg.max_len(task), cfg.vocab(task), seed),
            EmbeddingKind::BertFile => tiny_embedding_batch(task, 3, cfg.max_len(task), cfg.d_emb, seed),
        };
        let (pol, subj) = (batch(Task::Pol), batch(Task::Subj));
        let store = model.store.clone();
        let name = format!("end-to-end {mode} ({embedding})");
        cases.push(GradCase::new(name, store, move |t, s| {
            let out = model.forward_with(s, t, mode, Some(&pol), Some(&subj), Pass::Eval)?;
            Ok(out.loss)
        }).composite());
    }
    Ok(cases)
}

/// Every row of the standard suite, in display order.
pub fn standard_cases(seed: u64) -> Result<Vec<GradCase>> {
    let mut cases = op_cases(seed);
    cases.extend(layer_cases(seed)?);
    cases.extend(model_cases(seed)?);
    Ok(cases)
}

pub fn run_suite(cases: Vec<GradCase>) -> Vec<GradRow> {
    cases.into_iter().map(run_case).collect()
}
