//! Central-difference checks of the hand-written backward passes.

use crate::error::{Error, Result};
use crate::model::{model_backward_into, model_forward, Mode, ModelSpec};
use crate::nn::loss::l1_loss;
use crate::nn::params::ParamStore;
use crate::tensor::Tensor;

/// Outcome of a gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Entries skipped because a ReLU or `|.|` kink lay inside the difference stencil.
    pub skipped: usize,
}

/// Relative error with a small absolute floor so exactly-zero gradients compare sanely.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Mean L1 loss of the model over `batch` in inference mode (dropout off).
fn batch_loss(model: &ModelSpec, store: &ParamStore<f64>, batch: &[(Tensor<f64>, Tensor<f64>)]) -> Result<f64> {
    let mut total = 0.0;
    for (x, y) in batch {
        let (pred, _) = model_forward(model, store, x, Mode::Infer)?;
        total += l1_loss(&pred, y)?.0;
    }
    Ok(total / batch.len() as f64)
}

/// Compares analytic parameter gradients of the batch-mean L1 loss with central
/// differences. Up to `per_param` entries of each tensor are probed (evenly spaced).
///
/// A probe is skipped when the one-sided slopes disagree, which means the
/// stencil straddles a non-differentiable point.
pub fn grad_check(
    model: &ModelSpec,
    store: &ParamStore<f64>,
    batch: &[(Tensor<f64>, Tensor<f64>)],
    eps: f64,
    per_param: usize,
) -> Result<GradCheckReport> {
    if !(eps > 0.0) {
        return Err(Error::param(format!("finite-difference step must be positive, got {eps}")));
    }
    if batch.is_empty() {
        return Err(Error::param("gradient check needs at least one sample"));
    }
    let mut grads = store.grad_buffers();
    let scale = 1.0 / batch.len() as f64;
    for (x, y) in batch {
        let (pred, cache) = model_forward(model, store, x, Mode::Infer)?;
        let (_, g) = l1_loss(&pred, y)?;
        model_backward_into(model, store, cache, &g.scale(scale), &mut grads, false)?;
    }

    let values: Vec<Tensor<f64>> = store.iter().map(|p| p.value.clone()).collect();
    let mut probe = store.clone();
    finite_difference_check(&values, &grads, eps, per_param, |vals| {
        for (i, v) in vals.iter().enumerate() {
            probe.param_mut(i).value.data_mut().copy_from_slice(v.data());
        }
        batch_loss(model, &probe, batch)
    })
}

/// Generic central-difference check: perturbs entries of `values`, evaluates
/// `loss`, and compares with `analytic` (aligned with `values`).
pub fn finite_difference_check(
    values: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    eps: f64,
    per_param: usize,
    mut loss: impl FnMut(&[Tensor<f64>]) -> Result<f64>,
) -> Result<GradCheckReport> {
    if !(eps > 0.0) {
        return Err(Error::param(format!("finite-difference step must be positive, got {eps}")));
    }
    if values.len() != analytic.len() {
        return Err(Error::dim("gradient list does not match parameter list"));
    }
    let mut probe = values.to_vec();
    let base = loss(&probe)?;
    let mut report = GradCheckReport { max_rel_error: 0.0, checked: 0, skipped: 0 };
    for (pi, grad) in analytic.iter().enumerate() {
        let n = grad.len();
        let step = (n / per_param.max(1)).max(1);
        for idx in (0..n).step_by(step).take(per_param.max(1)) {
            let orig = probe[pi].data()[idx];
            probe[pi].data_mut()[idx] = orig + eps;
            let hi = loss(&probe)?;
            probe[pi].data_mut()[idx] = orig - eps;
            let lo = loss(&probe)?;
            probe[pi].data_mut()[idx] = orig;

            let fwd = (hi - base) / eps;
            let bwd = (base - lo) / eps;
            if rel_error(fwd, bwd) > 1e-3 {
                report.skipped += 1;
                continue;
            }
            let numeric = (hi - lo) / (2.0 * eps);
            let err = rel_error(grad.data()[idx], numeric);
            report.max_rel_error = report.max_rel_error.max(err);
            report.checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, Variant};
    use crate::nn::init_params;
    use crate::synth::LcgState;

    #[test]
    fn rejects_zero_step() {
        let m = build_model(Variant::VNet, 1, 1, (2, 2)).unwrap();
        let s: ParamStore<f64> = init_params(&m, &mut LcgState::seeded(1));
        let batch = vec![(Tensor::zeros(&[1, 2, 2]), Tensor::zeros(&[1, 2, 2]))];
        assert!(matches!(grad_check(&m, &s, &batch, 0.0, 4), Err(Error::Parameter(_))));
    }
}
