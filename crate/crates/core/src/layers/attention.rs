//! Self-attention pooling over timesteps.
//!
//! Each timestep gets a scalar score `P = tanh(F·W_att)`. The scores of one
//! sentence form a row `[1 × L]` which is mixed by a full `[L × L]` matrix
//! before the softmax, so a position's weight can depend on the scores at every
//! other position. The pooled vector is the `α`-weighted sum of the rows of `F`.
//!
//! With masking on, padded positions contribute nothing: their scores are
//! zeroed before the mixing matrix and their logits pushed to `MASK_LOGIT`,
//! which makes their softmax weight exactly zero.

use crate::error::{Error, Result};
use crate::tensor::{Float, ParamId, ParamStore, Tape, Tensor, Var};

/// Additive logit for padded positions.
pub const MASK_LOGIT: f64 = -1e9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Attention {
    /// `[D_f × 1]`.
    pub w_att: ParamId,
    /// `[L × L]`.
    pub w_alpha: ParamId,
}

impl Attention {
    pub fn ids(&self) -> [ParamId; 2] {
        [self.w_att, self.w_alpha]
    }
}

/// Pools `f: [B·L × D_f]` (rows grouped by sentence) into `s: [B × D_f]`.
/// Returns `(s, α)` with `α: [B × L]`.
pub fn self_attention<'a, T: Float>(
    tape: &mut Tape<'a, T>,
    store: &'a ParamStore<T>,
    f: Var,
    mask: &[u8],
    params: &Attention,
    use_mask: bool,
) -> Result<(Var, Var)> {
    let fs = tape.shape(f).to_vec();
    let l = store.value(params.w_alpha).shape()[0];
    if fs.len() != 2 || fs[0] % l != 0 || mask.len() != fs[0] {
        return Err(Error::dim("self_attention", &fs, &[mask.len(), l]));
    }
    let (b, d) = (fs[0] / l, fs[1]);
    for (row, m) in mask.chunks(l).enumerate() {
        if m.iter().all(|&v| v == 0) {
            return Err(Error::Data(format!(
                "attention input row {row} has no unmasked positions"
            )));
        }
    }

    let w_att = tape.param(store, params.w_att);
    let w_alpha = tape.param(store, params.w_alpha);
    let p = tape.matmul(f, w_att)?;
    let p = tape.tanh(p)?;
    let mut p = tape.reshape(p, &[b, l])?;
    if use_mask {
        let keep = Tensor::from_fn(&[b, l], |i| if mask[i] != 0 { T::one() } else { T::zero() });
        let keep = tape.constant(keep);
        p = tape.mul(p, keep)?;
    }
    let mut logits = tape.matmul(p, w_alpha)?;
    if use_mask {
        let neg = T::lit(MASK_LOGIT);
        let bias = Tensor::from_fn(&[b, l], |i| if mask[i] != 0 { T::zero() } else { neg });
        let bias = tape.constant(bias);
        logits = tape.add(logits, bias)?;
    }
    let alpha = tape.softmax_rows(logits)?;
    let a3 = tape.reshape(alpha, &[b, 1, l])?;
    let f3 = tape.reshape(f, &[b, l, d])?;
    let s = tape.bmm(a3, f3)?;
    let s = tape.reshape(s, &[b, d])?;
    Ok((s, alpha))
}
