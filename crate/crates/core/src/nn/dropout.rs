use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::synth::LcgState;
use crate::tensor::{Real, Tensor};

/// Default fraction of activations switched off during training.
pub const DEFAULT_DROPOUT: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    Infer,
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::param(format!("dropout rate must be in [0,1), got {rate}")));
    }
    Ok(())
}

/// Binary mask with each entry 0 with probability `rate`.
pub fn dropout_mask<T: Real>(dims: &[usize], rate: f64, rng: &mut LcgState) -> Result<Tensor<T>> {
    check_rate(rate)?;
    Ok(Tensor::from_fn(dims, |_| {
        if rng.next_u01() < rate {
            T::zero()
        } else {
            T::one()
        }
    }))
}

/// Plain masking `x * M`. Kept activations are not rescaled.
/// In inference mode the mask is all ones and no random numbers are drawn.
pub fn dropout_apply<T: Real>(
    x: &Tensor<T>,
    rate: f64,
    rng: &mut LcgState,
    mode: DropoutMode,
) -> Result<(Tensor<T>, Tensor<T>)> {
    check_rate(rate)?;
    let mask = match mode {
        DropoutMode::Train => dropout_mask(x.dims(), rate, rng)?,
        DropoutMode::Infer => Tensor::full(x.dims(), T::one()),
    };
    let out = x.zip_map(&mask, |a, m| a * m)?;
    Ok((out, mask))
}

/// One mask per Down-Block, shared by every sample of a training batch.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutPlan<T: Real> {
    pub rate: f64,
    pub masks: Vec<Tensor<T>>,
}

impl<T: Real> DropoutPlan<T> {
    pub fn sample(model: &ModelSpec, rate: f64, rng: &mut LcgState) -> Result<Self> {
        let masks = model
            .down
            .iter()
            .map(|d| dropout_mask(&d.mask_dims, rate, rng))
            .collect::<Result<_>>()?;
        Ok(DropoutPlan { rate, masks })
    }

    /// All-ones masks (dropout disabled).
    pub fn identity(model: &ModelSpec) -> Self {
        DropoutPlan {
            rate: 0.0,
            masks: model.down.iter().map(|d| Tensor::full(&d.mask_dims, T::one())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, Variant};

    #[test]
    fn rate_zero_and_infer_are_identity() {
        let x = Tensor::<f32>::from_fn(&[1, 4, 4], |i| i as f32 - 3.0);
        let (y, m) = dropout_apply(&x, 0.0, &mut LcgState::seeded(1), DropoutMode::Train).unwrap();
        assert_eq!(y, x);
        assert!(m.data().iter().all(|&v| v == 1.0));
        let (y, _) = dropout_apply(&x, 0.5, &mut LcgState::seeded(1), DropoutMode::Infer).unwrap();
        assert_eq!(y, x);
        assert!(dropout_apply(&x, 1.0, &mut LcgState::seeded(1), DropoutMode::Train).is_err());
    }

    #[test]
    fn zero_fraction_near_rate() {
        let m: Tensor<f32> = dropout_mask(&[10_000], 0.25, &mut LcgState::seeded(3)).unwrap();
        let zeros = m.data().iter().filter(|&&v| v == 0.0).count() as f64 / 10_000.0;
        assert!((zeros - 0.25).abs() < 0.02, "{zeros}");
    }

    #[test]
    fn consecutive_plans_differ() {
        let model = build_model(Variant::VNet, 2, 2, (8, 8)).unwrap();
        let mut rng = LcgState::seeded(4);
        let a = DropoutPlan::<f32>::sample(&model, 0.25, &mut rng).unwrap();
        let b = DropoutPlan::<f32>::sample(&model, 0.25, &mut rng).unwrap();
        assert_eq!(a.masks.len(), 2);
        assert_ne!(a.masks, b.masks);
    }
}
