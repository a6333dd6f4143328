use crate::error::{Error, Result};
use crate::nn::params::ParamStore;
use crate::tensor::Real;

/// ADAM hyper-parameters and step counter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStepState {
    /// Number of optimiser steps applied so far.
    pub t: u64,
    pub lr0: f64,
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainStepState {
    fn default() -> Self {
        TrainStepState {
            t: 0,
            lr0: 1e-4,
            decay: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainStepState {
    pub fn new(lr0: f64, decay: f64) -> Self {
        TrainStepState { lr0, decay, ..Default::default() }
    }

    /// Learning rate used by step number `t` (1-based): `lr0 / (1 + decay * t)`.
    pub fn lr_at(&self, t: u64) -> f64 {
        self.lr0 / (1.0 + self.decay * t as f64)
    }
}

/// Applies one bias-corrected ADAM update from the stored gradients, then zeroes them.
///
/// Fails without touching any parameter if a gradient is not finite.
pub fn adam_step<T: Real>(store: &mut ParamStore<T>, state: &mut TrainStepState) -> Result<()> {
    if let Some(p) = store.iter().find(|p| !p.grad.is_finite()) {
        return Err(Error::Numeric {
            location: p.name.clone(),
            detail: "non-finite gradient".into(),
        });
    }
    let t = state.t + 1;
    let lr = state.lr_at(t);
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    let (b1t, b2t) = (T::lit(b1), T::lit(b2));
    let (one_b1, one_b2) = (T::lit(1.0 - b1), T::lit(1.0 - b2));
    let (c1t, c2t) = (T::lit(c1), T::lit(c2));
    let (lrt, epst) = (T::lit(lr), T::lit(state.eps));
    for p in store.iter_mut() {
        let value = p.value.data_mut();
        let grad = p.grad.data_mut();
        let m = p.adam_m.data_mut();
        let v = p.adam_v.data_mut();
        for i in 0..value.len() {
            let g = grad[i];
            m[i] = b1t * m[i] + one_b1 * g;
            v[i] = b2t * v[i] + one_b2 * g * g;
            let m_hat = m[i] / c1t;
            let v_hat = v[i] / c2t;
            value[i] -= lrt * m_hat / (v_hat.sqrt() + epst);
            grad[i] = T::zero();
        }
    }
    state.t = t;
    store.bump_generation();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::full(&[1], v)).unwrap();
        s
    }

    #[test]
    fn zero_grads_leave_params() {
        let mut s = scalar_store(0.3);
        let mut st = TrainStepState::default();
        adam_step(&mut s, &mut st).unwrap();
        assert_eq!(s.value(0).data(), &[0.3]);
        assert_eq!(st.t, 1);
        assert_eq!(s.generation(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = scalar_store(0.0);
        s.param_mut(0).grad.fill(1.0);
        let mut st = TrainStepState::default();
        adam_step(&mut s, &mut st).unwrap();
        // m_hat = 1, v_hat = 1  =>  step = lr_1 / (1 + eps)
        let expected = -st.lr_at(1) / (1.0 + 1e-8);
        assert!((s.value(0).data()[0] - expected).abs() < 1e-18);
        assert_eq!(s.param(0).grad.data(), &[0.0]);
    }

    #[test]
    fn decay_halves_at_thousand() {
        let st = TrainStepState::default();
        assert!((st.lr_at(1000) - st.lr0 / 2.0).abs() < 1e-20);
    }

    #[test]
    fn nan_gradient_reported_by_name() {
        let mut s = scalar_store(1.0);
        s.param_mut(0).grad.fill(f64::NAN);
        let mut st = TrainStepState::default();
        match adam_step(&mut s, &mut st) {
            Err(Error::Numeric { location, .. }) => assert_eq!(location, "w"),
            other => panic!("{other:?}"),
        }
        assert_eq!(st.t, 0);
        assert_eq!(s.value(0).data(), &[1.0]);
    }

    #[test]
    fn constant_gradient_moves_monotonically() {
        let mut s = scalar_store(0.0);
        let mut st = TrainStepState { decay: 0.0, ..Default::default() };
        let mut prev = 0.0;
        for _ in 0..50 {
            s.param_mut(0).grad.fill(0.2);
            adam_step(&mut s, &mut st).unwrap();
            let now = s.value(0).data()[0];
            assert!(now < prev);
            prev = now;
        }
    }
}
