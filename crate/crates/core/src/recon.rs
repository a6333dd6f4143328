//! Full-image normalisation by sliding-window patch inference and overlap averaging.

use crate::error::{Error, Result};
use crate::model::{model_predict, ModelSpec};
use crate::nn::ParamStore;
use crate::tensor::Tensor;
use crate::threads::worker_count;

/// Patch anchors along one image dimension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchGrid {
    /// Image extent `H`.
    pub size: usize,
    /// Patch extent `h`.
    pub patch: usize,
    /// Stride `δ`.
    pub stride: usize,
    /// Regular anchors `q = ⌊(H − h)/δ⌋ + 1`.
    pub q: usize,
    /// 1 when a flush anchor `H − h` is appended to cover the leftover border.
    pub eps: usize,
    /// Sorted anchors; `anchors.len() == q + eps`.
    pub anchors: Vec<usize>,
}

impl PatchGrid {
    /// Number of patches `κ = q + ε`.
    pub fn kappa(&self) -> usize {
        self.q + self.eps
    }
}

pub fn patch_grid(size: usize, patch: usize, stride: usize) -> Result<PatchGrid> {
    if stride == 0 || patch == 0 {
        return Err(Error::param("patch size and stride must be positive"));
    }
    if patch > size {
        return Err(Error::param(format!("patch {patch} exceeds image extent {size}")));
    }
    let q = (size - patch) / stride + 1;
    let eps = usize::from(size - (q - 1) * stride - patch > 0);
    let mut anchors: Vec<usize> = (0..q).map(|i| i * stride).collect();
    if eps == 1 {
        anchors.push(size - patch);
    }
    Ok(PatchGrid { size, patch, stride, q, eps, anchors })
}

/// Reconstructed image plus the number of patch inferences performed.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub image: Tensor<f64>,
    pub invocations: usize,
}

/// Sliding-window reconstruction with an arbitrary patch predictor.
///
/// Patches are visited in row-major grid order; with several workers each one
/// predicts whole anchor rows and the sums are still accumulated in grid order,
/// so the result does not depend on the worker count.
pub fn reconstruct_with<F>(image: &Tensor<f64>, patch: (usize, usize), stride: usize, predict: F) -> Result<Reconstruction>
where
    F: Fn(&Tensor<f64>) -> Result<Tensor<f64>> + Sync,
{
    let (ch, rows, cols) = image.shape3()?;
    if ch != 1 {
        return Err(Error::dim(format!("reconstruction expects 1 channel, got {ch}")));
    }
    let (ph, pw) = patch;
    if rows < ph || cols < pw {
        return Err(Error::param(format!("image {rows}x{cols} is smaller than the {ph}x{pw} patch")));
    }
    if stride > ph.min(pw) {
        return Err(Error::param(format!("stride {stride} leaves gaps between {ph}x{pw} patches")));
    }
    let grid_r = patch_grid(rows, ph, stride)?;
    let grid_c = patch_grid(cols, pw, stride)?;

    let predict_row = |r0: usize| -> Result<Vec<Tensor<f64>>> {
        grid_c
            .anchors
            .iter()
            .map(|&c0| {
                let out = predict(&image.crop(r0, c0, ph, pw)?)?;
                if out.dims() != [1, ph, pw] {
                    return Err(Error::dim(format!("predictor returned {:?} for a {ph}x{pw} patch", out.dims())));
                }
                Ok(out)
            })
            .collect()
    };

    // Running mean per pixel: exact when every overlapping prediction agrees.
    let mut mean = vec![0.0f64; rows * cols];
    let mut count = vec![0u32; rows * cols];
    let mut accumulate = |r0: usize, preds: Vec<Tensor<f64>>| {
        for (&c0, p) in grid_c.anchors.iter().zip(preds) {
            for i in 0..ph {
                let dst = (r0 + i) * cols + c0;
                for (j, &v) in p.data()[i * pw..(i + 1) * pw].iter().enumerate() {
                    count[dst + j] += 1;
                    mean[dst + j] += (v - mean[dst + j]) / count[dst + j] as f64;
                }
            }
        }
    };

    let workers = worker_count().min(grid_r.anchors.len());
    if workers <= 1 {
        for &r0 in &grid_r.anchors {
            accumulate(r0, predict_row(r0)?);
        }
    } else {
        let predict_row = &predict_row;
        for wave in grid_r.anchors.chunks(workers) {
            let results: Vec<Result<Vec<Tensor<f64>>>> = std::thread::scope(|s| {
                let handles: Vec<_> = wave.iter().map(|&r0| s.spawn(move || predict_row(r0))).collect();
                handles.into_iter().map(|h| h.join().expect("reconstruction worker panicked")).collect()
            });
            for (&r0, preds) in wave.iter().zip(results) {
                accumulate(r0, preds?);
            }
        }
    }

    if count.contains(&0) {
        return Err(Error::Numeric {
            location: "reconstruct".into(),
            detail: "pixel not covered by any patch".into(),
        });
    }
    Ok(Reconstruction {
        image: Tensor::new(vec![1, rows, cols], mean)?,
        invocations: grid_r.kappa() * grid_c.kappa(),
    })
}

/// Normalises a full image with a trained network (inference mode, f32 weights).
pub fn reconstruct(model: &ModelSpec, store: &ParamStore<f32>, image: &Tensor<f64>, stride: usize) -> Result<Reconstruction> {
    let [_, ph, pw] = model.input_dims();
    reconstruct_with(image, (ph, pw), stride, |patch| {
        Ok(model_predict(model, store, &patch.cast::<f32>())?.cast())
    })
}
