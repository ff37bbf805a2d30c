//! Finite-difference verification harness for the backward pass.

use super::{shape_err, Graph, NodeId, Tensor, TensorError};

fn eval_scalar<F>(f: &F, x: &Tensor) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId, TensorError>,
{
    let mut g = Graph::new(false);
    let xid = g.leaf(x.clone(), false);
    let out = f(&mut g, xid)?;
    if g.values(out).len() != 1 {
        return Err(shape_err("grad_check target must be scalar"));
    }
    Ok(g.values(out)[0])
}

/// Compares backward-pass gradients of a scalar-valued function against
/// central finite differences with step `h`, returning the maximum over
/// coordinates of `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
///
/// The check samples exactly the coordinates of `x`; keep inputs away from
/// non-differentiable points (ReLU at exactly zero, max-pool ties).
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId, TensorError>,
{
    let mut graph = Graph::new(true);
    let xid = graph.leaf(x.clone(), true);
    let loss = f(&mut graph, xid)?;
    if graph.values(loss).len() != 1 {
        return Err(shape_err("grad_check target must be scalar"));
    }
    graph.backward(loss)?;
    let analytic = graph
        .grad(xid)
        .ok_or_else(|| shape_err("input gradient was not tracked"))?
        .to_vec();

    let mut max_rel: f64 = 0.0;
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.values[i];
        probe.values[i] = orig + h;
        let plus = eval_scalar(&f, &probe)?;
        probe.values[i] = orig - h;
        let minus = eval_scalar(&f, &probe)?;
        probe.values[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        max_rel = max_rel.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(max_rel)
}
