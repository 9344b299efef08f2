//! One task's sentence encoder, from token ids (or precomputed embeddings) to
//! the pooled representation `Fn` and the task feature `X`.

use rand::Rng;

use super::{
    bilstm_forward, dropout, self_attention, time_distributed_fc, Activation, Attention, Dense,
    LstmParams, Phase,
};
use crate::data::{BatchInputs, EncodedBatch};
use crate::error::{Error, Result};
use crate::tensor::{Float, ParamId, ParamStore, Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    /// `Some(V)` learns a `[V × d_in]` embedding table; `None` takes
    /// precomputed `[B, L, d_in]` embeddings.
    pub vocab_size: Option<usize>,
    pub d_in: usize,
    pub max_len: usize,
    pub hidden: usize,
    pub d_f: usize,
    pub d_a: usize,
    pub d_t: usize,
    pub dropout: f64,
    pub activation: Activation,
    pub attention_mask: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskEncoderParams {
    pub embedding: Option<ParamId>,
    pub fwd: LstmParams,
    pub bwd: LstmParams,
    pub tdfc: Dense,
    pub attention: Attention,
    pub fc: Dense,
    pub out: Dense,
}

/// Vars produced by [`TaskEncoderParams::encode`].
#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput {
    /// `[B × D_a]`, the representation shared with the fusion layer.
    pub fn_: Var,
    /// `[B × D_t]`, the task-specific feature.
    pub x: Var,
    /// `[B × L]` attention weights.
    pub alpha: Var,
}

impl TaskEncoderParams {
    pub fn register<T: Float>(
        store: &mut ParamStore<T>,
        prefix: &str,
        cfg: &EncoderConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let embedding = match cfg.vocab_size {
            Some(v) => {
                let table = crate::data::glove::random_table(v, cfg.d_in, rng.gen());
                Some(store.add(format!("{prefix}.embedding"), table)?)
            }
            None => None,
        };
        let h = cfg.hidden;
        let fwd = LstmParams::register(store, &format!("{prefix}.lstm.fwd"), cfg.d_in, h, rng)?;
        let bwd = LstmParams::register(store, &format!("{prefix}.lstm.bwd"), cfg.d_in, h, rng)?;
        let tdfc = Dense::register(store, &format!("{prefix}.tdfc"), 2 * h, cfg.d_f, rng)?;
        let attention = Attention {
            w_att: store.add(format!("{prefix}.att.w"), super::glorot(rng, cfg.d_f, 1))?,
            w_alpha: store.add(
                format!("{prefix}.att.alpha"),
                super::glorot(rng, cfg.max_len, cfg.max_len),
            )?,
        };
        let fc = Dense::register(store, &format!("{prefix}.fc"), cfg.d_f, cfg.d_a, rng)?;
        let out = Dense::register(store, &format!("{prefix}.out"), cfg.d_a, cfg.d_t, rng)?;
        Ok(Self { embedding, fwd, bwd, tdfc, attention, fc, out })
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.embedding.into_iter().collect();
        ids.extend(self.fwd.ids());
        ids.extend(self.bwd.ids());
        ids.extend(self.tdfc.ids());
        ids.extend(self.attention.ids());
        ids.extend(self.fc.ids());
        ids.extend(self.out.ids());
        ids
    }

    /// Runs the full encoder on one batch. `rng` drives dropout and is left
    /// untouched in [`Phase::Eval`].
    pub fn encode<'a, T: Float>(
        &self,
        tape: &mut Tape<'a, T>,
        store: &'a ParamStore<T>,
        batch: &EncodedBatch<T>,
        cfg: &EncoderConfig,
        phase: Phase,
        rng: &mut impl Rng,
    ) -> Result<EncoderOutput> {
        let (b, l) = (batch.batch, batch.max_len);
        if l != cfg.max_len {
            return Err(Error::dim("encode", &[b, l], &[b, cfg.max_len]));
        }
        let e = match (&batch.inputs, self.embedding) {
            (BatchInputs::Tokens(ids), Some(table)) => {
                let table = tape.param(store, table);
                let rows = tape.gather_rows(table, ids)?;
                tape.reshape(rows, &[b, l, cfg.d_in])?
            }
            (BatchInputs::Embeddings(t), None) => {
                if t.shape() != [b, l, cfg.d_in] {
                    return Err(Error::dim("encode", t.shape(), &[b, l, cfg.d_in]));
                }
                tape.constant(t.clone())
            }
            (BatchInputs::Tokens(_), None) => {
                return Err(Error::Usage("token batch given to an encoder without an embedding table".into()))
            }
            (BatchInputs::Embeddings(_), Some(_)) => {
                return Err(Error::Usage("embedding batch given to a token encoder".into()))
            }
        };

        let fwd = self.fwd.bind(tape, store);
        let bwd = self.bwd.bind(tape, store);
        let h = bilstm_forward(tape, e, &fwd, &bwd)?;
        let f = time_distributed_fc(tape, store, h, &self.tdfc, cfg.activation)?;
        let f = dropout(tape, f, cfg.dropout, phase, rng)?;
        let (s, alpha) = self_attention(tape, store, f, &batch.mask, &self.attention, cfg.attention_mask)?;
        let fn_ = self.fc.forward(tape, store, s, cfg.activation)?;
        let fn_ = dropout(tape, fn_, cfg.dropout, phase, rng)?;
        // the pooled vector is already one row per sentence, so flattening is a reshape
        let fn_ = tape.reshape(fn_, &[b, cfg.d_a])?;
        let x = self.out.forward(tape, store, fn_, cfg.activation)?;
        Ok(EncoderOutput { fn_, x, alpha })
    }
}
