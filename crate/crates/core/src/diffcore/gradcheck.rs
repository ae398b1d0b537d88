//! Central-difference gradient checking.

use super::graph::{Graph, Var};
use super::params::ParamSet;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Worst `|analytic - numeric| / max(1, |analytic|)` over all coordinates.
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub coordinates: usize,
}

/// Compares `backward` against central differences for every scalar in `params`.
///
/// `build` must construct a scalar loss deterministically from the given parameters.
pub fn gradient_check<F>(build: F, params: &ParamSet, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamSet) -> Result<Var>,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut g = Graph::new();
    let root = build(&mut g, params)?;
    let analytic = g.backward(root, params)?;

    let eval = |p: &ParamSet| -> Result<f64> {
        let mut g = Graph::new();
        let root = build(&mut g, p)?;
        Ok(g.value(root).item())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        coordinates: 0,
    };
    let mut probe = params.clone();
    for (name, grad) in &analytic {
        for (i, &a) in grad.data().iter().enumerate() {
            let orig = probe.get(name)?.data()[i];
            probe.get_mut(name)?[i] = orig + step;
            let plus = eval(&probe)?;
            probe.get_mut(name)?[i] = orig - step;
            let minus = eval(&probe)?;
            probe.get_mut(name)?[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let err = (a - numeric).abs() / a.abs().max(1.0);
            report.coordinates += 1;
            if err > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = err;
                report.worst_param = name.clone();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}
