//! Central finite-difference checks against tape gradients.

use super::{ParamId, ParamStore, Tape, Var};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheckEntry {
    /// `|a - n| / max(|a|, |n|, floor)`.
    pub fn rel_err(&self, floor: f64) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs()).max(floor);
        (self.analytic - self.numeric).abs() / scale
    }
}

/// Compare analytic gradients of `loss` with central differences of step `h`
/// at the given `(parameter, flat index)` coordinates. Existing gradients in
/// `store` are cleared first and left holding the analytic result.
pub fn check<F>(
    store: &mut ParamStore,
    coords: &[(ParamId, usize)],
    h: f64,
    mut loss: F,
) -> Result<Vec<GradCheckEntry>>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
{
    store.zero_grads();
    let mut tape = Tape::new();
    let l = loss(store, &mut tape)?;
    tape.backward(l, store)?;

    let mut eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::no_grad();
        let v = loss(s, &mut t)?;
        Ok(t.value(v)[0])
    };

    let mut out = Vec::with_capacity(coords.len());
    for &(id, index) in coords {
        let analytic = store.get(id).grad().map(|g| g[index]).unwrap_or(0.0);
        let orig = store.get(id).values()[index];
        store.get_mut(id).values_mut()[index] = orig + h;
        let plus = eval(store)?;
        store.get_mut(id).values_mut()[index] = orig - h;
        let minus = eval(store)?;
        store.get_mut(id).values_mut()[index] = orig;
        out.push(GradCheckEntry {
            param: store.name(id).to_string(),
            index,
            analytic,
            numeric: (plus - minus) / (2.0 * h),
        });
    }
    Ok(out)
}
