//! Central finite-difference comparison against [`Graph::backward`].

use alloc::vec::Vec;

use super::{AutodiffError, Graph, NodeId};
use crate::tensor::Tensor;

/// Default perturbation.
pub const STEP: f64 = 1e-5;
/// Gradients smaller than this are compared absolutely.
pub const FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    /// `(tensor, entry)` of the worst disagreement.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, FLOOR)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

fn entries(len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        return (0..len).collect();
    }
    let stride = len as f64 / max as f64;
    (0..max).map(|k| (k as f64 * stride) as usize).collect()
}

/// Compares analytic gradients of the scalar built by `build` with central
/// differences, for up to `max_per_tensor` evenly spaced entries of every
/// tensor in `params`.
pub fn check_gradients<F>(params: &[Tensor], max_per_tensor: usize, mut build: F) -> Result<GradCheck, AutodiffError>
where
    F: FnMut(&mut Graph, &[NodeId]) -> Result<NodeId, AutodiffError>,
{
    let mut params: Vec<Tensor> = params.iter().map(|p| p.clone().trainable()).collect();
    let mut eval = |params: &[Tensor]| -> Result<(Graph, Vec<NodeId>, NodeId), AutodiffError> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = params.iter().map(|p| g.leaf(p)).collect();
        let loss = build(&mut g, &ids)?;
        Ok((g, ids, loss))
    };
    let (mut g, ids, loss) = eval(&params)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .zip(&params)
        .map(|(&id, p)| g.grad(id).map_or_else(|| alloc::vec![0.0; p.len()], <[f64]>::to_vec))
        .collect();

    let mut report = GradCheck {
        max_rel_err: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    for t in 0..params.len() {
        for j in entries(params[t].len(), max_per_tensor) {
            let orig = params[t].data()[j];
            params[t].data_mut()[j] = orig + STEP;
            let (g, _, l) = eval(&params)?;
            let plus = g.scalar(l);
            params[t].data_mut()[j] = orig - STEP;
            let (g, _, l) = eval(&params)?;
            let minus = g.scalar(l);
            params[t].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            let err = rel_err(analytic[t][j], numeric);
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = (t, j);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_matches() {
        let x = Tensor::row(alloc::vec![0.3, -1.2, 2.0]);
        let r = check_gradients(&[x], 10, |g, p| {
            let y = g.mul(p[0], p[0])?;
            g.sum(y)
        })
        .unwrap();
        assert_eq!(r.checked, 3);
        assert!(r.max_rel_err < 1e-8);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // Scale is applied to the value only via a constant, so the checker
        // sees the analytic gradient of `sum(x)` against a numeric one of
        // `sum(2x)`.
        let x = Tensor::row(alloc::vec![1.0]);
        let mut calls = 0;
        let r = check_gradients(&[x], 1, |g, p| {
            calls += 1;
            let k = if calls == 1 { 1.0 } else { 2.0 };
            let y = g.scale(p[0], k)?;
            g.sum(y)
        })
        .unwrap();
        assert!(r.max_rel_err > 0.1);
    }
}
