//! Central finite-difference verification of tape gradients.

use super::tape::{ParamStore, Tape, Var};
use crate::error::{numeric_err, Result};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central difference step.
    pub h: f64,
    /// Check at most this many evenly spaced entries of each parameter.
    /// `None` checks every entry.
    pub max_entries_per_param: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            h: 1e-5,
            max_entries_per_param: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `max |g_analytic − g_fd| / max(1, |g_fd|)` over all checked entries.
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub entries_checked: usize,
}

/// Compares tape gradients with central differences.
///
/// `objective` builds a scalar loss on the given tape from the given
/// parameters; it is called once with backward and twice per checked entry.
/// Anything stochastic inside it (clusters, masks) must be held fixed by the
/// caller.
pub fn finite_diff_gradcheck<F>(
    store: &ParamStore,
    cfg: &GradCheckConfig,
    mut objective: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = objective(&mut tape, store)?;
    let analytic = tape.backward(loss, store)?;
    drop(tape);

    let mut eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let v = objective(&mut tape, s)?;
        let value = tape.value(v).data()[0];
        if !value.is_finite() {
            return Err(numeric_err!("objective is not finite"));
        }
        Ok(value)
    };

    let mut work = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        entries_checked: 0,
    };
    for (id, grad) in analytic.iter() {
        let n = grad.numel();
        let stride = match cfg.max_entries_per_param {
            Some(limit) if limit > 0 && n > limit => n.div_ceil(limit),
            _ => 1,
        };
        for i in (0..n).step_by(stride) {
            let orig = work.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + cfg.h;
            let plus = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig - cfg.h;
            let minus = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig;

            let fd = (plus - minus) / (2.0 * cfg.h);
            let err = (grad.data()[i] - fd).abs() / fd.abs().max(1.0);
            report.entries_checked += 1;
            if err > report.max_rel_error || report.entries_checked == 1 {
                report.max_rel_error = err;
                report.worst_param = store.entry(id).name.clone();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}
