//! Central finite-difference oracle for gradient checks.
//!
//! This only ever evaluates loss values, never the recorded backward pass,
//! so it stays independent of the differentiation path it checks.

use indexmap::IndexMap;

use super::autodiff::{gradient_of, Tape, Var};
use super::params::ParamSet;
use crate::error::Result;

/// Magnitudes below this are compared on an absolute scale.
pub const REL_ERROR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<(String, usize, f64, f64)>,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

fn evaluate<F>(params: &ParamSet, f: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &IndexMap<String, Var>) -> Result<Var>,
{
    let mut tape = Tape::inference();
    let vars = tape.params(params);
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(out).item())
}

/// Compares the recorded gradient of `f` with central differences of step
/// `h` on every parameter element.
pub fn check_gradients<F>(params: &ParamSet, f: F, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &IndexMap<String, Var>) -> Result<Var>,
{
    let (_, grads) = gradient_of(params, &f)?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let mut probe = params.clone();
    for (name, value) in params.iter() {
        let analytic = grads.expect(name);
        for i in 0..value.len() {
            let orig = value.data()[i];
            probe.get_mut(name).unwrap().data_mut()[i] = orig + h;
            let up = evaluate(&probe, &f)?;
            probe.get_mut(name).unwrap().data_mut()[i] = orig - h;
            let down = evaluate(&probe, &f)?;
            probe.get_mut(name).unwrap().data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[i];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((name.to_string(), i, a, numeric));
            }
        }
    }
    Ok(report)
}
