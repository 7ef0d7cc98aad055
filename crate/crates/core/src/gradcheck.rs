//! Central finite-difference verification of analytic gradients.

use crate::error::{arg_err, Result};
use crate::graph::{Graph, Mode, Var};
use crate::params::ParamStore;

pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// `(parameter name, max relative error)` for every trainable parameter.
    pub per_param: Vec<(String, f64)>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn error_for(&self, name: &str) -> Option<f64> {
        self.per_param.iter().find(|(n, _)| n == name).map(|(_, e)| *e)
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn eval_scalar<F>(store: &ParamStore, mode: Mode, f: &F) -> Result<f64>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let mut g = Graph::new(store, mode);
    let out = f(&mut g)?;
    let t = g.value(out);
    if t.numel() != 1 {
        return Err(arg_err("grad_check", format!("function must be scalar, got shape {:?}", t.shape())));
    }
    Ok(t.data()[0])
}

/// Compares backprop gradients of the scalar `f` against central differences
/// with step [`FD_STEP`] for every parameter that requires a gradient.
/// Frozen parameters are left out of the report.
pub fn grad_check<F>(store: &mut ParamStore, mode: Mode, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new(store, mode);
        let out = f(&mut g)?;
        if g.value(out).numel() != 1 {
            return Err(arg_err(
                "grad_check",
                format!("function must be scalar, got shape {:?}", g.shape(out)),
            ));
        }
        g.backward(out)?
    };
    let ids: Vec<_> = store.iter().filter(|(_, p)| p.requires_grad).map(|(id, _)| id).collect();
    let mut per_param = Vec::with_capacity(ids.len());
    let mut max_rel_error: f64 = 0.0;
    for id in ids {
        let n = store.get(id).numel();
        let grad = analytic.param(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + FD_STEP;
            let plus = eval_scalar(store, mode, &f)?;
            store.get_mut(id).value.data_mut()[i] = orig - FD_STEP;
            let minus = eval_scalar(store, mode, &f)?;
            store.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(grad[i], numeric));
        }
        max_rel_error = max_rel_error.max(worst);
        per_param.push((store.get(id).name.clone(), worst));
    }
    Ok(GradCheckReport {
        per_param,
        max_rel_error,
    })
}
