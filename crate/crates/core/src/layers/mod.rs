//! Per-task encoder stack: embedding, BiLSTM, time-distributed dense,
//! dropout, self-attention pooling, dense layers.

pub mod attention;
pub mod dropout;
pub mod encoder;
pub mod lstm;

use std::fmt;
use std::str::FromStr;

use rand::Rng;

pub use attention::{self_attention, Attention, MASK_LOGIT};
pub use dropout::dropout;
pub use encoder::{EncoderConfig, EncoderOutput, TaskEncoderParams};
pub use lstm::{bilstm_forward, lstm_cell_step, BoundLstm, LstmParams};

use crate::error::{Error, Result};
use crate::tensor::{Float, ParamId, ParamStore, Tape, Tensor, Var};

/// Training applies dropout; evaluation is deterministic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    pub fn apply<T: Float>(self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        match self {
            Activation::Tanh => tape.tanh(x),
            Activation::Relu => tape.relu(x),
            Activation::Identity => Ok(x),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}

/// Glorot-uniform matrix `[fan_in × fan_out]`.
pub fn glorot<T: Float>(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(&[fan_in, fan_out], |_| T::lit(rng.gen_range(-limit..limit)))
}

/// Weight and bias of an affine layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn register<T: Float>(
        store: &mut ParamStore<T>,
        prefix: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            w: store.add(format!("{prefix}.w"), glorot(rng, fan_in, fan_out))?,
            b: store.add(format!("{prefix}.b"), Tensor::zeros(&[fan_out]))?,
        })
    }

    /// `act(x·W + b)` for `x: [N × fan_in]`.
    pub fn forward<'a, T: Float>(
        &self,
        tape: &mut Tape<'a, T>,
        store: &'a ParamStore<T>,
        x: Var,
        act: Activation,
    ) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let z = tape.matmul(x, w)?;
        let z = tape.add_row_bias(z, b)?;
        act.apply(tape, z)
    }

    pub fn ids(&self) -> [ParamId; 2] {
        [self.w, self.b]
    }
}

/// Time-distributed dense layer: the same affine map and activation at every
/// timestep of `h: [B, L, D_in]`, giving `[B·L × D_out]`.
pub fn time_distributed_fc<'a, T: Float>(
    tape: &mut Tape<'a, T>,
    store: &'a ParamStore<T>,
    h: Var,
    layer: &Dense,
    act: Activation,
) -> Result<Var> {
    let s = tape.shape(h).to_vec();
    if s.len() != 3 {
        return Err(Error::dim("time_distributed_fc", &s, store.value(layer.w).shape()));
    }
    let flat = tape.reshape(h, &[s[0] * s[1], s[2]])?;
    layer.forward(tape, store, flat, act)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tdfc_zero_weights_and_row_permutation() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = crate::rng::stream(0, "t", 0);
        let layer = Dense::register(&mut store, "td", 3, 2, &mut rng).unwrap();
        let h = Tensor::<f64>::from_fn(&[1, 4, 3], |i| (i as f64 * 0.3).sin());
        // rows 0..4 reversed
        let perm = [3usize, 2, 1, 0];
        let mut hp = h.clone();
        for (dst, &src) in perm.iter().enumerate() {
            hp.data_mut()[dst * 3..dst * 3 + 3].copy_from_slice(&h.data()[src * 3..src * 3 + 3]);
        }
        let mut tape = Tape::new();
        let a = tape.constant(h);
        let b = tape.constant(hp);
        let ya = time_distributed_fc(&mut tape, &store, a, &layer, Activation::Tanh).unwrap();
        let yb = time_distributed_fc(&mut tape, &store, b, &layer, Activation::Tanh).unwrap();
        for (dst, &src) in perm.iter().enumerate() {
            assert_eq!(
                tape.value(yb).data()[dst * 2..dst * 2 + 2],
                tape.value(ya).data()[src * 2..src * 2 + 2]
            );
        }
        drop(tape);

        store.value_mut(layer.w).fill(0.0);
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::from_fn(&[2, 3, 3], |i| i as f64));
        let y = time_distributed_fc(&mut tape, &store, a, &layer, Activation::Tanh).unwrap();
        assert_eq!(tape.shape(y), &[6, 2]);
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tdfc_rejects_wrong_rank() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = crate::rng::stream(0, "t", 0);
        let layer = Dense::register(&mut store, "td", 3, 2, &mut rng).unwrap();
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[4, 3]));
        assert!(time_distributed_fc(&mut tape, &store, a, &layer, Activation::Tanh).is_err());
        let a = tape.constant(Tensor::zeros(&[1, 4, 5]));
        assert!(time_distributed_fc(&mut tape, &store, a, &layer, Activation::Tanh).is_err());
    }
}
