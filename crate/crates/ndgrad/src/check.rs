//! Finite-difference verification of reverse-mode gradients.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Outcome of a gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(param, element)` where the worst error occurred.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub elements_checked: usize,
}

/// Relative error with the denominator floored at `1e-8`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<(Graph, Vec<Var>, Var)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    let value = g.value(out).item();
    if !value.is_finite() {
        return Err(Error::NonFinite {
            value,
            context: "objective at unperturbed parameters".into(),
        });
    }
    Ok((g, vars, out))
}

/// Compares the reverse-mode gradient of every element of every parameter
/// with the central difference `(f(p+h) - f(p-h)) / 2h`.
pub fn grad_check<F>(f: F, params: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    grad_check_subset(f, params, h, |_, numel| (0..numel).collect())
}

/// Like [`grad_check`], restricted to the elements chosen by `select`, which
/// receives the parameter position and element count.
pub fn grad_check_subset<F, S>(f: F, params: &[Tensor], h: f64, select: S) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
    S: Fn(usize, usize) -> Vec<usize>,
{
    let (g, vars, out) = evaluate(&f, params)?;
    let grads = g.backward(out);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        elements_checked: 0,
    };
    let mut probe = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var);
        for ei in select(pi, params[pi].numel()) {
            let original = params[pi].data()[ei];
            probe[pi].data_mut()[ei] = original + h;
            let plus = objective(&f, &probe, pi, ei)?;
            probe[pi].data_mut()[ei] = original - h;
            let minus = objective(&f, &probe, pi, ei)?;
            probe[pi].data_mut()[ei] = original;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.map_or(0.0, |t| t.data()[ei]);
            let err = relative_error(a, numeric);
            report.elements_checked += 1;
            if err > report.max_rel_error || report.elements_checked == 1 {
                report.max_rel_error = err;
                report.worst = (pi, ei);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

fn objective<F>(f: &F, params: &[Tensor], pi: usize, ei: usize) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.constant(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    let value = g.value(out).item();
    if !value.is_finite() {
        return Err(Error::NonFinite {
            value,
            context: format!("objective with parameter {pi} element {ei} perturbed"),
        });
    }
    Ok(value)
}
