//! Central-difference verification of reverse-mode gradients.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::{Error, Result};

/// Worst observed analytic-vs-numeric mismatch for one scalar loss.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(parameter index, flat element index)` of the worst element.
    pub worst: (usize, usize),
    pub elements_checked: usize,
}

/// Compares analytic gradients of a scalar loss against central finite
/// differences at `params`.
///
/// `build` must deterministically construct the loss from leaves created in
/// the given order; it is re-run twice per probed element. At most
/// `samples_per_param` elements of each parameter are probed, chosen
/// without replacement from a seeded shuffle. The relative error of one
/// element is `|a - n| / max(|a|, |n|, 1)` so tiny gradients are compared
/// on an absolute scale.
pub fn grad_check<F>(
    params: &[Tensor],
    mut build: F,
    eps: f64,
    samples_per_param: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    if !(eps > 0.0) {
        return Err(Error::Config("grad_check eps must be positive".into()));
    }
    let mut eval = |values: &[Tensor], want_grads: bool| -> Result<(f64, Vec<Option<Tensor>>)> {
        let mut graph = Graph::new();
        let ids: Vec<NodeId> = values.iter().map(|t| graph.leaf(t.clone(), true)).collect();
        let loss = build(&mut graph, &ids)?;
        let value = graph.value(loss).item()?;
        if !value.is_finite() {
            return Err(Error::Numeric(format!("loss is not finite: {value}")));
        }
        let grads = if want_grads {
            graph.backward(loss)?;
            ids.iter().map(|&id| graph.grad(id).cloned()).collect()
        } else {
            Vec::new()
        };
        Ok((value, grads))
    };

    let (_, analytic) = eval(params, true)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport { max_rel_err: 0.0, worst: (0, 0), elements_checked: 0 };

    for (pi, param) in params.iter().enumerate() {
        let zero = Tensor::zeros(param.shape());
        let a = analytic[pi].as_ref().unwrap_or(&zero);
        let mut idx: Vec<usize> = (0..param.numel()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(samples_per_param);
        for k in idx {
            let mut lo = params.to_vec();
            let mut hi = params.to_vec();
            lo[pi].data_mut()[k] -= eps;
            hi[pi].data_mut()[k] += eps;
            let (f_lo, _) = eval(&lo, false)?;
            let (f_hi, _) = eval(&hi, false)?;
            let numeric = (f_hi - f_lo) / (2.0 * eps);
            let av = a.data()[k];
            let rel = (av - numeric).abs() / av.abs().max(numeric.abs()).max(1.0);
            report.elements_checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = (pi, k);
            }
        }
    }
    Ok(report)
}
