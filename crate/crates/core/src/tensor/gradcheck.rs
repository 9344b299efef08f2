//! Central finite-difference gradient verification (64-bit only).

use super::{ParamId, ParamStore, Tape, Var};
use crate::error::Result;

/// Step for `(f(x+h) - f(x-h)) / 2h`.
pub const FD_STEP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Max over coordinates of `|a - n| / max(|a|, |n|, 1e-8)`.
    pub max_rel_error: f64,
    /// Parameter and flat index where the maximum occurred.
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric derivative at `worst`.
    pub worst_values: (f64, f64),
    /// Same ratio after subtracting the rounding uncertainty of the central
    /// difference itself, `ROUNDING_ULPS · ε_mach · max|f(x±h)| / 2h`.
    pub max_rounding_adjusted_error: f64,
    pub coordinates: usize,
}

/// Ulps of the loss value assumed lost to rounding in each evaluation.
pub const ROUNDING_ULPS: f64 = 4.0;

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares backward-pass gradients of the scalar built by `f` against
/// central differences, for every coordinate of every parameter in `store`.
pub fn grad_check<F>(store: &mut ParamStore<f64>, f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&mut Tape<'t, f64>, &'t ParamStore<f64>) -> Result<Var>,
{
    let ids: Vec<ParamId> = store.ids().collect();
    grad_check_subset(store, &ids, f)
}

pub fn grad_check_subset<F>(store: &mut ParamStore<f64>, ids: &[ParamId], f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&mut Tape<'t, f64>, &'t ParamStore<f64>) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new();
        let loss = f(&mut tape, store)?;
        tape.backward(loss)?
    };
    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = f(&mut tape, store)?;
        Ok(tape.value(loss).item())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_values: (0.0, 0.0),
        max_rounding_adjusted_error: 0.0,
        coordinates: 0,
    };
    for &id in ids {
        let n = store.value(id).numel();
        for i in 0..n {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + FD_STEP;
            let plus = eval(store);
            store.value_mut(id).data_mut()[i] = orig - FD_STEP;
            let minus = eval(store);
            store.value_mut(id).data_mut()[i] = orig;
            let (plus, minus) = (plus?, minus?);
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic.get(id).map_or(0.0, |g| g.data()[i]);
            let err = rel_error(a, numeric);
            let noise = ROUNDING_ULPS * f64::EPSILON * plus.abs().max(minus.abs()) / (2.0 * FD_STEP);
            let adjusted = ((a - numeric).abs() - noise).max(0.0) / a.abs().max(numeric.abs()).max(1e-8);
            report.max_rounding_adjusted_error = report.max_rounding_adjusted_error.max(adjusted);
            report.coordinates += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((store.get(id).name.clone(), i));
                report.worst_values = (a, numeric);
            }
        }
    }
    Ok(report)
}
