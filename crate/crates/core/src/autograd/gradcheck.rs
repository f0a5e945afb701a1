use alloc::string::String;
use alloc::vec::Vec;

use super::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

/// Outcome of a central finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Parameter name and flat index where the worst error occurred.
    pub worst: Option<(String, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    /// Largest `|analytic − numeric|` over all elements.
    pub max_abs_error: f64,
    pub elements_checked: usize,
}

fn evaluate<F>(store: &ParamStore, loss_fn: &mut F) -> Result<f64>
where
    F: FnMut(&ParamStore, &mut Graph) -> Result<NodeId>,
{
    let mut graph = Graph::new();
    let loss = loss_fn(store, &mut graph)?;
    Ok(graph.value(loss).item())
}

/// Compares analytic gradients of `loss_fn` against
/// `(f(p+eps) − f(p−eps)) / 2eps` for every element of `params` (all
/// parameters when `params` is `None`).
///
/// Relative error is `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
/// Parameter values are restored before returning.
pub fn finite_difference_check<F>(
    store: &mut ParamStore,
    eps: f64,
    params: Option<&[ParamId]>,
    loss_fn: F,
) -> Result<GradCheck>
where
    F: FnMut(&ParamStore, &mut Graph) -> Result<NodeId>,
{
    finite_difference_check_floored(store, eps, params, 1e-8, loss_fn)
}

/// Like [`finite_difference_check`] with relative error
/// `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
///
/// The central difference carries a rounding error of roughly
/// `ε_mach · |f| / eps`, so gradients much smaller than that cannot be
/// resolved. `floor` turns the comparison absolute below that scale.
pub fn finite_difference_check_floored<F>(
    store: &mut ParamStore,
    eps: f64,
    params: Option<&[ParamId]>,
    floor: f64,
    mut loss_fn: F,
) -> Result<GradCheck>
where
    F: FnMut(&ParamStore, &mut Graph) -> Result<NodeId>,
{
    let mut graph = Graph::new();
    let loss = loss_fn(store, &mut graph)?;
    let first = graph.value(loss).item();
    let grads = graph.backward(loss)?;
    let second = evaluate(store, &mut loss_fn)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }

    let ids: Vec<ParamId> = match params {
        Some(list) => list.to_vec(),
        None => store.ids().collect(),
    };
    let analytic_of = |pid: ParamId, i: usize| -> f64 {
        grads
            .params()
            .find(|(p, _)| *p == pid)
            .and_then(|(_, g)| g.map(|g| g[i]))
            .unwrap_or(0.0)
    };

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        max_abs_error: 0.0,
        elements_checked: 0,
    };
    for pid in ids {
        for i in 0..store.value(pid).len() {
            let original = store.value(pid).data()[i];
            store.value_mut(pid).data_mut()[i] = original + eps;
            let plus = evaluate(store, &mut loss_fn);
            store.value_mut(pid).data_mut()[i] = original - eps;
            let minus = evaluate(store, &mut loss_fn);
            store.value_mut(pid).data_mut()[i] = original;
            let numeric = (plus? - minus?) / (2.0 * eps);
            let analytic = analytic_of(pid, i);
            let abs = (analytic - numeric).abs();
            let rel = abs / analytic.abs().max(numeric.abs()).max(floor);
            report.max_abs_error = report.max_abs_error.max(abs);
            report.elements_checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                if rel >= report.max_rel_error {
                    report.worst = Some((store.get(pid).name.clone(), i));
                    report.analytic = analytic;
                    report.numeric = numeric;
                }
            }
        }
    }
    Ok(report)
}
