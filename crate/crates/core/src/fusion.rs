//! Neural tensor network fusion, softmax heads, and the cross-entropy objective.

use rand::Rng;

use crate::data::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::layers::glorot;
use crate::tensor::{Float, ParamId, ParamStore, Tape, Tensor, Var};

/// Probability floor inside the log of the cross-entropy.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NtnParams {
    /// `[D_ntn × D_a × D_a]`.
    pub t: ParamId,
    /// `[2·D_a × D_ntn]`.
    pub w: ParamId,
    /// `[D_ntn]`.
    pub b: ParamId,
}

impl NtnParams {
    pub fn register<T: Float>(
        store: &mut ParamStore<T>,
        d_a: usize,
        d_ntn: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if d_ntn == 0 {
            return Err(Error::Config("NTN width must be at least 1".into()));
        }
        let slices = glorot::<T>(rng, d_ntn * d_a, d_a).reshape(&[d_ntn, d_a, d_a])?;
        Ok(Self {
            t: store.add("ntn.t", slices)?,
            w: store.add("ntn.w", glorot(rng, 2 * d_a, d_ntn))?,
            b: store.add("ntn.b", Tensor::zeros(&[d_ntn]))?,
        })
    }

    pub fn ids(&self) -> [ParamId; 3] {
        [self.t, self.w, self.b]
    }
}

/// `out[:, k] = tanh(s1ᵀ T[k] s2 + (s1 ⊕ s2) W[:, k] + b[k])` for `s1, s2: [B × D_a]`.
pub fn ntn_fuse<'a, T: Float>(
    tape: &mut Tape<'a, T>,
    store: &'a ParamStore<T>,
    s1: Var,
    s2: Var,
    p: &NtnParams,
) -> Result<Var> {
    let t = tape.param(store, p.t);
    let w = tape.param(store, p.w);
    let b = tape.param(store, p.b);
    let bil = tape.bilinear(s1, t, s2)?;
    let cat = tape.concat(&[s1, s2], 1)?;
    let lin = tape.matmul(cat, w)?;
    let z = tape.add(bil, lin)?;
    let z = tape.add_row_bias(z, b)?;
    tape.tanh(z)
}

/// Softmax classifier over `X ⊕ N`. The weight has `D_t + D_ntn` rows; without
/// an NTN input only the first `D_t` rows are used.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeadParams {
    pub w: ParamId,
    pub b: ParamId,
    pub d_t: usize,
    pub d_ntn: usize,
}

impl HeadParams {
    /// Zero-initialized, so an untrained head predicts the uniform distribution.
    pub fn register<T: Float>(store: &mut ParamStore<T>, prefix: &str, d_t: usize, d_ntn: usize) -> Result<Self> {
        Ok(Self {
            w: store.add(format!("{prefix}.head.w"), Tensor::zeros(&[d_t + d_ntn, NUM_CLASSES]))?,
            b: store.add(format!("{prefix}.head.b"), Tensor::zeros(&[NUM_CLASSES]))?,
            d_t,
            d_ntn,
        })
    }

    pub fn ids(&self) -> [ParamId; 2] {
        [self.w, self.b]
    }
}

/// Class probabilities `[B × C]`.
pub fn classify_head<'a, T: Float>(
    tape: &mut Tape<'a, T>,
    store: &'a ParamStore<T>,
    x: Var,
    n: Option<Var>,
    p: &HeadParams,
) -> Result<Var> {
    let w = tape.param(store, p.w);
    let b = tape.param(store, p.b);
    let logits = match n {
        Some(n) => {
            let cat = tape.concat(&[x, n], 1)?;
            tape.matmul(cat, w)?
        }
        None => {
            let w_x = tape.slice(w, 0, 0, p.d_t)?;
            tape.matmul(x, w_x)?
        }
    };
    let logits = tape.add_row_bias(logits, b)?;
    tape.softmax_rows(logits)
}

/// Argmax per row, ties going to the lower class index.
pub fn predict<T: Float>(probs: &Tensor<T>) -> Vec<usize> {
    let c = *probs.shape().last().unwrap_or(&1);
    probs
        .data()
        .chunks(c)
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// `−(1/B) Σ_b Σ_c y log max(P, 1e-12)`.
pub fn cross_entropy<T: Float>(tape: &mut Tape<'_, T>, probs: Var, onehot: Var) -> Result<Var> {
    let s = tape.shape(probs).to_vec();
    if s.len() != 2 || tape.shape(onehot) != s.as_slice() {
        return Err(Error::dim("cross_entropy", &s, tape.shape(onehot)));
    }
    let logp = tape.log_clamped(probs, T::lit(LOG_FLOOR))?;
    let picked = tape.mul(logp, onehot)?;
    let total = tape.sum(picked)?;
    tape.scale(total, T::lit(-1.0 / s[0] as f64))
}

/// `w_subj·J_subj + w_pol·J_pol`. A zero weight drops that task from the
/// objective; negative weights are rejected.
pub fn joint_loss<T: Float>(
    tape: &mut Tape<'_, T>,
    j_subj: Var,
    j_pol: Var,
    w_subj: f64,
    w_pol: f64,
) -> Result<Var> {
    check_loss_weights(w_subj, w_pol)?;
    let a = tape.scale(j_subj, T::lit(w_subj))?;
    let b = tape.scale(j_pol, T::lit(w_pol))?;
    tape.add(a, b)
}

pub fn check_loss_weights(w_subj: f64, w_pol: f64) -> Result<()> {
    let ok = |w: f64| w.is_finite() && w >= 0.0;
    if !ok(w_subj) || !ok(w_pol) || w_subj + w_pol == 0.0 {
        return Err(Error::Config(format!(
            "loss weights must be non-negative and not both zero (subj {w_subj}, pol {w_pol})"
        )));
    }
    Ok(())
}
