use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Compare the analytic gradient of a scalar-valued function against central
/// finite differences.
///
/// `f` rebuilds the computation from a leaf var on a fresh graph, so the
/// analytic pass and every perturbed evaluation run the same code. Returns
/// the maximum over coordinates of
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut graph = Graph::new();
    let xv = graph.leaf(x.clone());
    let loss = f(&mut graph, xv)?;
    graph.backward(loss)?;
    let analytic = graph
        .grad(xv)
        .map(Tensor::into_data)
        .unwrap_or_else(|| vec![0.0; x.len()]);

    let eval = |point: &Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.leaf(point.clone());
        let loss = f(&mut g, v)?;
        Ok(g.value(loss).item())
    };

    let mut max_err: f64 = 0.0;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
        let denom = 1.0_f64.max(analytic[i].abs()).max(numeric.abs());
        max_err = max_err.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(max_err)
}
