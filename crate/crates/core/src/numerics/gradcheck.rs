use super::graph::{Graph, NodeId, ParamId};
use super::params::ParamStore;
use super::tensor::Tensor2;
use crate::error::{Result, SluError};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(1, |analytic|, |numeric|)` over all entries.
    pub max_rel_error: f64,
    /// `(parameter index, flat entry index)` where the maximum occurred.
    pub worst: (usize, usize),
    pub entries_checked: usize,
}

/// Compares tape gradients of a scalar function against central differences.
///
/// `f` builds the function on a fresh graph given one node per tensor in
/// `theta` (registered as `ParamId(0..n)`) and returns the scalar output.
pub fn grad_check<F>(f: F, theta: &[Tensor2], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    if !(eps > 0.0) {
        return Err(SluError::Contract(format!("grad_check step must be positive, got {eps}")));
    }
    let eval = |params: &[Tensor2], want_grad: bool| -> Result<(f64, Option<super::Gradients>)> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = params
            .iter()
            .enumerate()
            .map(|(i, t)| g.param(ParamId(i), t))
            .collect();
        let out = f(&mut g, &ids)?;
        let v = g.value(out).item();
        if !v.is_finite() {
            return Err(SluError::NonFinite(format!("grad_check objective evaluated to {v}")));
        }
        let grads = if want_grad { Some(g.backward(out)?) } else { None };
        Ok((v, grads))
    };

    let (_, grads) = eval(theta, true)?;
    let grads = grads.expect("requested gradient");
    let mut params = theta.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        entries_checked: 0,
    };
    for p in 0..params.len() {
        for k in 0..params[p].len() {
            let orig = params[p].data()[k];
            params[p].data_mut()[k] = orig + eps;
            let (plus, _) = eval(&params, false)?;
            params[p].data_mut()[k] = orig - eps;
            let (minus, _) = eval(&params, false)?;
            params[p].data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = grads.get(ParamId(p)).map_or(0.0, |g| g.data()[k]);
            let err = (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs());
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (p, k);
            }
            report.entries_checked += 1;
        }
    }
    Ok(report)
}

/// [`grad_check`] over the trainable tensors of a [`ParamStore`]. `f` must
/// register parameters on the graph under their store ids.
pub fn grad_check_store<S, F>(store: &mut S, f: F, eps: f64) -> Result<GradCheckReport>
where
    S: ParamStore,
    F: Fn(&S, &mut Graph) -> Result<NodeId>,
{
    if !(eps > 0.0) {
        return Err(SluError::Contract(format!("grad_check step must be positive, got {eps}")));
    }
    let eval = |store: &S| -> Result<f64> {
        let mut g = Graph::new();
        let out = f(store, &mut g)?;
        let v = g.value(out).item();
        if !v.is_finite() {
            return Err(SluError::NonFinite(format!("grad_check objective evaluated to {v}")));
        }
        Ok(v)
    };
    let grads = {
        let mut g = Graph::new();
        let out = f(store, &mut g)?;
        g.backward(out)?
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        entries_checked: 0,
    };
    for id in store.param_ids() {
        if !store.is_trainable(id) {
            continue;
        }
        for k in 0..store.param(id).len() {
            let orig = store.param(id).data()[k];
            store.param_mut(id).data_mut()[k] = orig + eps;
            let plus = eval(store);
            store.param_mut(id).data_mut()[k] = orig - eps;
            let minus = eval(store);
            store.param_mut(id).data_mut()[k] = orig;
            let numeric = (plus? - minus?) / (2.0 * eps);
            let analytic = grads.get(id).map_or(0.0, |g| g.data()[k]);
            let err = (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs());
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (id.0, k);
            }
            report.entries_checked += 1;
        }
    }
    Ok(report)
}
