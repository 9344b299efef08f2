//! Peephole LSTM and the bidirectional wrapper.
//!
//! ```text
//! i_t = σ(W_xi x_t + W_hi h_{t-1} + w_ci ⊙ c_{t-1} + b_i)
//! f_t = σ(W_xf x_t + W_hf h_{t-1} + w_cf ⊙ c_{t-1} + b_f)
//! c_t = f_t ⊙ c_{t-1} + i_t ⊙ tanh(W_xc x_t + W_hc h_{t-1} + b_c)
//! o_t = σ(W_xo x_t + W_ho h_{t-1} + w_co ⊙ c_t + b_o)
//! h_t = o_t ⊙ tanh(c_t)
//! ```
//! Peephole weights are diagonal (stored as vectors). Inputs are row vectors,
//! so the stored input weights are `[D_in × H]` and products read `x·W`.

use rand::Rng;

use super::glorot;
use crate::error::{Error, Result};
use crate::tensor::{Float, ParamId, ParamStore, Tape, Tensor, Var};

/// Gate order used by every `[_; 4]` below.
pub const GATES: [&str; 4] = ["i", "f", "c", "o"];

/// One direction's parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmParams {
    /// `W_xi, W_xf, W_xc, W_xo`: `[D_in × H]`.
    pub w_x: [ParamId; 4],
    /// `W_hi, W_hf, W_hc, W_ho`: `[H × H]`.
    pub w_h: [ParamId; 4],
    /// `w_ci, w_cf, w_co`: `[H]`.
    pub w_c: [ParamId; 3],
    /// `b_i, b_f, b_c, b_o`: `[H]`.
    pub b: [ParamId; 4],
    pub d_in: usize,
    pub hidden: usize,
}

impl LstmParams {
    /// Glorot-uniform weights, zero peepholes, zero biases except a forget bias of 1.
    pub fn register<T: Float>(
        store: &mut ParamStore<T>,
        prefix: &str,
        d_in: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut w_x = Vec::new();
        let mut w_h = Vec::new();
        let mut b = Vec::new();
        for g in GATES {
            w_x.push(store.add(format!("{prefix}.w_x{g}"), glorot(rng, d_in, hidden))?);
        }
        for g in GATES {
            w_h.push(store.add(format!("{prefix}.w_h{g}"), glorot(rng, hidden, hidden))?);
        }
        let mut w_c = Vec::new();
        for g in ["i", "f", "o"] {
            w_c.push(store.add(format!("{prefix}.w_c{g}"), Tensor::zeros(&[hidden]))?);
        }
        for g in GATES {
            let init = if g == "f" { T::one() } else { T::zero() };
            b.push(store.add(format!("{prefix}.b_{g}"), Tensor::full(&[hidden], init))?);
        }
        Ok(Self {
            w_x: w_x.try_into().unwrap(),
            w_h: w_h.try_into().unwrap(),
            w_c: w_c.try_into().unwrap(),
            b: b.try_into().unwrap(),
            d_in,
            hidden,
        })
    }

    pub fn ids(&self) -> Vec<ParamId> {
        self.w_x
            .iter()
            .chain(&self.w_h)
            .chain(&self.w_c)
            .chain(&self.b)
            .copied()
            .collect()
    }

    /// Puts every parameter on the tape once, for reuse across timesteps.
    pub fn bind<'a, T: Float>(&self, tape: &mut Tape<'a, T>, store: &'a ParamStore<T>) -> BoundLstm {
        BoundLstm {
            w_x: self.w_x.map(|id| tape.param(store, id)),
            w_h: self.w_h.map(|id| tape.param(store, id)),
            w_c: self.w_c.map(|id| tape.param(store, id)),
            b: self.b.map(|id| tape.param(store, id)),
            hidden: self.hidden,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLstm {
    pub w_x: [Var; 4],
    pub w_h: [Var; 4],
    pub w_c: [Var; 3],
    pub b: [Var; 4],
    pub hidden: usize,
}

/// Recurrent part of one step, given the input projections `zx[g] = x·W_xg + b_g`.
/// `state` is `None` at the first step (zero `h` and `c`), whose terms vanish.
fn step_from_projections<T: Float>(
    tape: &mut Tape<'_, T>,
    p: &BoundLstm,
    zx: [Var; 4],
    state: Option<(Var, Var)>,
) -> Result<(Var, Var)> {
    let mut pre = zx;
    if let Some((h, c)) = state {
        for g in 0..4 {
            let hh = tape.matmul(h, p.w_h[g])?;
            pre[g] = tape.add(pre[g], hh)?;
        }
        let ci = tape.mul_row(c, p.w_c[0])?;
        pre[0] = tape.add(pre[0], ci)?;
        let cf = tape.mul_row(c, p.w_c[1])?;
        pre[1] = tape.add(pre[1], cf)?;
    }
    let i = tape.sigmoid(pre[0])?;
    let cand = tape.tanh(pre[2])?;
    let ig = tape.mul(i, cand)?;
    let c_new = match state {
        Some((_, c)) => {
            let f = tape.sigmoid(pre[1])?;
            let fc = tape.mul(f, c)?;
            tape.add(fc, ig)?
        }
        None => ig,
    };
    let co = tape.mul_row(c_new, p.w_c[2])?;
    let o_pre = tape.add(pre[3], co)?;
    let o = tape.sigmoid(o_pre)?;
    let tc = tape.tanh(c_new)?;
    let h_new = tape.mul(o, tc)?;
    Ok((h_new, c_new))
}

/// One step on `x_t: [B × D_in]` from `(h_prev, c_prev): [B × H]`.
pub fn lstm_cell_step<T: Float>(
    tape: &mut Tape<'_, T>,
    p: &BoundLstm,
    x_t: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var)> {
    let mut zx = [x_t; 4];
    for g in 0..4 {
        let z = tape.matmul(x_t, p.w_x[g])?;
        zx[g] = tape.add_row_bias(z, p.b[g])?;
    }
    step_from_projections(tape, p, zx, Some((h_prev, c_prev)))
}

/// Runs one direction over `[B, L, D_in]`, returning `[B, L, H]` with row `t`
/// holding the state after consuming position `t`.
pub fn lstm_sequence<T: Float>(tape: &mut Tape<'_, T>, p: &BoundLstm, e: Var, reverse: bool) -> Result<Var> {
    let s = tape.shape(e).to_vec();
    if s.len() != 3 {
        return Err(Error::dim("lstm_sequence", &s, &[0, 0, 0]));
    }
    let (b, l, d) = (s[0], s[1], s[2]);
    let h = p.hidden;
    let flat = tape.reshape(e, &[b * l, d])?;
    let mut proj = [flat; 4];
    for g in 0..4 {
        let z = tape.matmul(flat, p.w_x[g])?;
        let z = tape.add_row_bias(z, p.b[g])?;
        proj[g] = tape.reshape(z, &[b, l, h])?;
    }
    let mut outputs = vec![None; l];
    let mut state = None;
    let order: Vec<usize> = if reverse { (0..l).rev().collect() } else { (0..l).collect() };
    for t in order {
        let mut zx = proj;
        for g in 0..4 {
            let sl = tape.slice(proj[g], 1, t, 1)?;
            zx[g] = tape.reshape(sl, &[b, h])?;
        }
        let (h_t, c_t) = step_from_projections(tape, p, zx, state)?;
        state = Some((h_t, c_t));
        outputs[t] = Some(tape.reshape(h_t, &[b, 1, h])?);
    }
    let outputs: Vec<Var> = outputs.into_iter().map(Option::unwrap).collect();
    tape.concat(&outputs, 1)
}

/// `[B, L, D_in] -> [B, L, 2H]`: forward states then backward states at each position.
pub fn bilstm_forward<T: Float>(tape: &mut Tape<'_, T>, e: Var, fwd: &BoundLstm, bwd: &BoundLstm) -> Result<Var> {
    let hf = lstm_sequence(tape, fwd, e, false)?;
    let hb = lstm_sequence(tape, bwd, e, true)?;
    tape.concat(&[hf, hb], 2)
}
