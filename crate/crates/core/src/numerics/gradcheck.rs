use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::params::ParamSet;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Worst relative error per parameter array, in name order.
    pub per_param: Vec<(String, f64)>,
    pub coordinates: usize,
}

/// `|a − n| / max(1e-12, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-12)
}

fn evaluate<F>(params: &ParamSet, f: &F) -> Result<(Tape, Var)>
where
    F: Fn(&mut Tape, &BTreeMap<String, Var>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = tape.params(params)?;
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out).values()[0];
    if !v.is_finite() {
        return Err(Error::Numerical(format!("function value {v} is not finite")));
    }
    Ok((tape, out))
}

/// Checks the gradient of the scalar built by `f` at `params` coordinate by
/// coordinate. `f` must be deterministic.
pub fn finite_difference_check<F>(params: &ParamSet, eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &BTreeMap<String, Var>) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::Contract(format!("eps must be positive, got {eps}")));
    }
    let (tape, out) = evaluate(params, &f)?;
    let grads = tape.backward(out)?;
    drop(tape);

    let value_at = |p: &ParamSet| -> Result<f64> {
        let (t, o) = evaluate(p, &f)?;
        Ok(t.value(o).values()[0])
    };

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        per_param: Vec::new(),
        coordinates: 0,
    };
    let names: Vec<String> = params.names().map(String::from).collect();
    for name in names {
        let analytic = grads
            .get(&name)
            .ok_or_else(|| Error::Contract(format!("no gradient for {name}")))?
            .clone();
        let mut worst: f64 = 0.0;
        for i in 0..analytic.len() {
            let original = params.get(&name)?.values()[i];
            work.get_mut(&name).unwrap().values_mut()[i] = original + eps;
            let plus = value_at(&work)?;
            work.get_mut(&name).unwrap().values_mut()[i] = original - eps;
            let minus = value_at(&work)?;
            work.get_mut(&name).unwrap().values_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(analytic.values()[i], numeric));
            report.coordinates += 1;
        }
        report.max_rel_error = report.max_rel_error.max(worst);
        report.per_param.push((name, worst));
    }
    Ok(report)
}
