use crate::error::Result;
use crate::tensor::{Real, Tensor};

/// Mean absolute error and its gradient `sign(pred - target) / count`, with `sign(0) = 0`.
pub fn l1_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    let n = T::from_usize(pred.len()).unwrap();
    let diff = pred.zip_map(target, |p, t| p - t)?;
    let loss = diff.data().iter().map(|d| d.abs()).sum::<T>() / n;
    let grad = diff.map(|d| {
        if d > T::zero() {
            T::one() / n
        } else if d < T::zero() {
            -T::one() / n
        } else {
            T::zero()
        }
    });
    Ok((loss, grad))
}
