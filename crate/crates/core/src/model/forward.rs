//! Whole-network forward and backward passes.
//!
//! The encoder maps `x_0 -> x_1 -> .. -> x_K`; the decoder starts from
//! `y_K = x_K` and each Up-Block `k` combines `y_k` with the skip `x_{k-1}`;
//! the tail reduces the two-channel `y_0` to the single-channel estimate.

use crate::error::{Error, Result};
use crate::model::spec::{ConvSpec, DownSpec, Merge, ModelSpec, TailSpec, UpSpec};
use crate::nn::dropout::DropoutPlan;
use crate::nn::params::ParamStore;
use crate::ops::{
    concat_channels, conv2d_backward_with, conv2d_forward, elementwise_sub, maxpool2x2_backward,
    maxpool2x2_forward, relu, relu_backward, split_channels, upsample_nearest2x,
    upsample_nearest2x_backward, PoolIndex,
};
use crate::tensor::{Real, Tensor};

/// Forward-pass mode. Training applies the plan's dropout masks.
#[derive(Debug, Clone, Copy)]
pub enum Mode<'a, T: Real> {
    Infer,
    Train(&'a DropoutPlan<T>),
}

fn conv_relu<T: Real>(store: &ParamStore<T>, c: &ConvSpec, x: &Tensor<T>) -> Result<Tensor<T>> {
    let pre = conv2d_forward(x, store.value(c.weight), store.value(c.bias()).data())?;
    Ok(relu(&pre))
}

/// Backward through `relu(conv(x))` given the activation `out`. Kernel and bias
/// gradients are added to `grads`; returns the input gradient when requested.
fn conv_relu_backward<T: Real>(
    store: &ParamStore<T>,
    c: &ConvSpec,
    x: &Tensor<T>,
    out: &Tensor<T>,
    grad_out: &Tensor<T>,
    grads: &mut [Tensor<T>],
    need_input: bool,
) -> Result<Option<Tensor<T>>> {
    let g = relu_backward(out, grad_out)?;
    let cg = conv2d_backward_with(&g, x, store.value(c.weight), need_input)?;
    grads[c.weight].add_assign(&cg.kernel)?;
    for (dst, &b) in grads[c.bias()].data_mut().iter_mut().zip(&cg.bias) {
        *dst += b;
    }
    Ok(cg.input)
}

fn check_finite<T: Real>(t: &Tensor<T>, block: &str) -> Result<()> {
    if !t.is_finite() {
        return Err(Error::Numeric {
            location: block.to_string(),
            detail: "non-finite activation".into(),
        });
    }
    Ok(())
}

/// Saved activations of one Down-Block.
#[derive(Debug, Clone)]
pub struct DownCache<T: Real> {
    pub r_hat: Tensor<T>,
    pub s_hat: Tensor<T>,
    pub mask: Option<Tensor<T>>,
    pub pool: PoolIndex,
}

/// conv3x3 + ReLU, conv3x3 + ReLU, optional dropout mask, 2x2 max-pool.
pub fn down_block<T: Real>(
    store: &ParamStore<T>,
    spec: &DownSpec,
    x: &Tensor<T>,
    mask: Option<&Tensor<T>>,
) -> Result<(Tensor<T>, DownCache<T>)> {
    let r_hat = conv_relu(store, &spec.conv1, x)?;
    let s_hat = conv_relu(store, &spec.conv2, &r_hat)?;
    let pooled_input = match mask {
        Some(m) => s_hat.zip_map(m, |a, b| a * b)?,
        None => s_hat.clone(),
    };
    let (out, pool) = maxpool2x2_forward(&pooled_input)?;
    Ok((
        out,
        DownCache {
            r_hat,
            s_hat,
            mask: mask.cloned(),
            pool,
        },
    ))
}

fn down_block_backward<T: Real>(
    store: &ParamStore<T>,
    spec: &DownSpec,
    x: &Tensor<T>,
    cache: &DownCache<T>,
    grad_out: &Tensor<T>,
    grads: &mut [Tensor<T>],
    need_input: bool,
) -> Result<Option<Tensor<T>>> {
    let mut g = maxpool2x2_backward(grad_out, &cache.pool)?;
    if let Some(m) = &cache.mask {
        g = g.zip_map(m, |a, b| a * b)?;
    }
    let g = conv_relu_backward(store, &spec.conv2, &cache.r_hat, &cache.s_hat, &g, grads, true)?
        .expect("requested");
    conv_relu_backward(store, &spec.conv1, x, &cache.r_hat, &g, grads, need_input)
}

/// Saved activations of one Up-Block.
#[derive(Debug, Clone)]
pub struct UpCache<T: Real> {
    /// Upsampled input `t_k`.
    pub upsampled: Tensor<T>,
    /// `t_hat_k = relu(conv2x2(t_k))`.
    pub t_hat: Tensor<T>,
    /// Merge result before any channel duplication.
    pub merged: Tensor<T>,
    /// Input of the first 3x3 convolution.
    pub conv_input: Tensor<T>,
    pub u: Tensor<T>,
    pub u_tilde: Tensor<T>,
}

/// Upsample, conv2x2 + ReLU, merge with `skip`, then two conv3x3 + ReLU.
pub fn up_block<T: Real>(
    store: &ParamStore<T>,
    spec: &UpSpec,
    y: &Tensor<T>,
    skip: &Tensor<T>,
) -> Result<(Tensor<T>, UpCache<T>)> {
    let upsampled = upsample_nearest2x(y)?;
    let t_hat = conv_relu(store, &spec.upconv, &upsampled)?;
    let merged = match spec.merge {
        Merge::Concat => concat_channels(&t_hat, skip)?,
        Merge::Subtract => elementwise_sub(skip, &t_hat)?,
    };
    let conv_input = if spec.duplicate_merged {
        concat_channels(&merged, &merged)?
    } else {
        merged.clone()
    };
    let u = conv_relu(store, &spec.conv1, &conv_input)?;
    let u_tilde = conv_relu(store, &spec.conv2, &u)?;
    Ok((
        u_tilde.clone(),
        UpCache {
            upsampled,
            t_hat,
            merged,
            conv_input,
            u,
            u_tilde,
        },
    ))
}

/// Returns the gradients for `y_k` and for the skip tensor.
fn up_block_backward<T: Real>(
    store: &ParamStore<T>,
    spec: &UpSpec,
    cache: &UpCache<T>,
    grad_out: &Tensor<T>,
    grads: &mut [Tensor<T>],
) -> Result<(Tensor<T>, Tensor<T>)> {
    let g_u = conv_relu_backward(store, &spec.conv2, &cache.u, &cache.u_tilde, grad_out, grads, true)?
        .expect("requested");
    let g_in = conv_relu_backward(store, &spec.conv1, &cache.conv_input, &cache.u, &g_u, grads, true)?
        .expect("requested");
    let g_merged = if spec.duplicate_merged {
        let (a, b) = split_channels(&g_in, cache.merged.channels())?;
        a.zip_map(&b, |x, y| x + y)?
    } else {
        g_in
    };
    let (g_t_hat, g_skip) = match spec.merge {
        Merge::Concat => split_channels(&g_merged, cache.t_hat.channels())?,
        Merge::Subtract => (g_merged.map(|v| -v), g_merged),
    };
    let g_up = conv_relu_backward(store, &spec.upconv, &cache.upsampled, &cache.t_hat, &g_t_hat, grads, true)?
        .expect("requested");
    Ok((upsample_nearest2x_backward(&g_up)?, g_skip))
}

/// Saved activations of the tail.
#[derive(Debug, Clone)]
pub struct TailCache<T: Real> {
    pub y0: Tensor<T>,
    pub y_tilde: Tensor<T>,
    pub y_hat: Tensor<T>,
}

/// Two conv3x3 + ReLU layers reducing `y_0` to one channel.
pub fn tail<T: Real>(store: &ParamStore<T>, spec: &TailSpec, y0: &Tensor<T>) -> Result<(Tensor<T>, TailCache<T>)> {
    let y_tilde = conv_relu(store, &spec.conv1, y0)?;
    let y_hat = conv_relu(store, &spec.conv2, &y_tilde)?;
    Ok((
        y_hat.clone(),
        TailCache {
            y0: y0.clone(),
            y_tilde,
            y_hat,
        },
    ))
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T: Real> {
    generation: u64,
    param_count: usize,
    /// `x_0 .. x_K`.
    pub skips: Vec<Tensor<T>>,
    pub down: Vec<DownCache<T>>,
    /// In execution order (level K first).
    pub up: Vec<UpCache<T>>,
    pub tail: TailCache<T>,
}

impl<T: Real> ForwardCache<T> {
    /// Cache of the Up-Block at `level` (1-based).
    pub fn up_level(&self, level: usize) -> &UpCache<T> {
        &self.up[self.up.len() - level]
    }
}

/// Runs the network on one `(1, R_0, C_0)` patch.
pub fn model_forward<T: Real>(
    model: &ModelSpec,
    store: &ParamStore<T>,
    x0: &Tensor<T>,
    mode: Mode<T>,
) -> Result<(Tensor<T>, ForwardCache<T>)> {
    if x0.dims() != model.input_dims() {
        return Err(Error::dim(format!(
            "model expects input {:?}, got {:?}",
            model.input_dims(),
            x0.dims()
        )));
    }
    if store.len() != model.param_shapes().len() {
        return Err(Error::dim("parameter store does not belong to this model"));
    }
    let masks = match mode {
        Mode::Train(plan) => {
            if plan.masks.len() != model.down.len() {
                return Err(Error::dim("dropout plan does not match the model depth"));
            }
            Some(&plan.masks)
        }
        Mode::Infer => None,
    };

    let mut skips = Vec::with_capacity(model.levels + 1);
    skips.push(x0.clone());
    let mut down = Vec::with_capacity(model.levels);
    for (i, d) in model.down.iter().enumerate() {
        let mask = masks.map(|m| &m[i]);
        let (x, cache) = down_block(store, d, &skips[i], mask)?;
        check_finite(&x, &format!("down{}", d.level))?;
        skips.push(x);
        down.push(cache);
    }

    let mut y = skips[model.levels].clone();
    let mut up = Vec::with_capacity(model.levels);
    for u in &model.up {
        let (next, cache) = up_block(store, u, &y, &skips[u.level - 1])?;
        check_finite(&next, &format!("up{}", u.level))?;
        y = next;
        up.push(cache);
    }

    let (y_hat, tail_cache) = tail(store, &model.tail, &y)?;
    check_finite(&y_hat, "tail")?;
    Ok((
        y_hat,
        ForwardCache {
            generation: store.generation(),
            param_count: store.len(),
            skips,
            down,
            up,
            tail: tail_cache,
        },
    ))
}

/// Inference-mode forward pass without keeping the cache.
pub fn model_predict<T: Real>(model: &ModelSpec, store: &ParamStore<T>, x0: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(model_forward(model, store, x0, Mode::Infer)?.0)
}

/// Backpropagates `grad_y_hat` through the cached pass, adding parameter gradients
/// into `grads` (aligned with store order). Returns the gradient w.r.t. `x_0`
/// when `need_input` is set.
pub fn model_backward_into<T: Real>(
    model: &ModelSpec,
    store: &ParamStore<T>,
    cache: ForwardCache<T>,
    grad_y_hat: &Tensor<T>,
    grads: &mut [Tensor<T>],
    need_input: bool,
) -> Result<Option<Tensor<T>>> {
    if cache.generation != store.generation() || cache.param_count != store.len() {
        return Err(Error::Usage(
            "forward cache was taken against different parameters".into(),
        ));
    }
    if grads.len() != store.len() {
        return Err(Error::dim("gradient buffers do not match the parameter store"));
    }
    grad_y_hat.check_same_dims(&cache.tail.y_hat)?;

    let g = conv_relu_backward(
        store,
        &model.tail.conv2,
        &cache.tail.y_tilde,
        &cache.tail.y_hat,
        grad_y_hat,
        grads,
        true,
    )?
    .expect("requested");
    let mut g_y = conv_relu_backward(store, &model.tail.conv1, &cache.tail.y0, &cache.tail.y_tilde, &g, grads, true)?
        .expect("requested");

    // Gradients flowing into each x_k through skip links.
    let mut g_skip: Vec<Option<Tensor<T>>> = vec![None; model.levels + 1];
    for (spec, up) in model.up.iter().zip(&cache.up).rev() {
        let (g_prev, g_s) = up_block_backward(store, spec, up, &g_y, grads)?;
        g_skip[spec.level - 1] = Some(g_s);
        g_y = g_prev;
    }

    // y_K = x_K
    let mut g_x = g_y;
    let mut g_input = None;
    for (i, (spec, dc)) in model.down.iter().zip(&cache.down).enumerate().rev() {
        let is_first = i == 0;
        let g_in = down_block_backward(store, spec, &cache.skips[i], dc, &g_x, grads, !is_first || need_input)?;
        if is_first {
            g_input = g_in;
        } else {
            g_x = g_in.expect("requested");
            if let Some(s) = g_skip[i].take() {
                g_x.add_assign(&s)?;
            }
        }
    }
    if let (Some(gi), Some(s)) = (g_input.as_mut(), g_skip[0].take()) {
        gi.add_assign(&s)?;
    }
    Ok(g_input)
}

/// Backpropagates and adds the parameter gradients into the store.
pub fn model_backward<T: Real>(
    model: &ModelSpec,
    store: &mut ParamStore<T>,
    cache: ForwardCache<T>,
    grad_y_hat: &Tensor<T>,
) -> Result<()> {
    let mut grads = store.grad_buffers();
    model_backward_into(model, store, cache, grad_y_hat, &mut grads, false)?;
    store.accumulate(&grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, Variant};
    use crate::nn::init_params;
    use crate::synth::LcgState;

    fn zeroed(model: &ModelSpec) -> ParamStore<f64> {
        let mut s: ParamStore<f64> = init_params(model, &mut LcgState::seeded(0));
        for p in s.iter_mut() {
            p.value.fill(0.0);
        }
        s
    }

    #[test]
    fn shapes_for_all_variants() {
        for v in [Variant::VNet, Variant::UNet, Variant::ResVNet] {
            let m = build_model(v, 5, 2, (32, 32)).unwrap();
            let s: ParamStore<f32> = init_params(&m, &mut LcgState::seeded(1));
            let x = Tensor::from_fn(&[1, 32, 32], |i| (i as f32 * 0.1).sin());
            let (y, cache) = model_forward(&m, &s, &x, Mode::Infer).unwrap();
            assert_eq!(y.dims(), &[1, 32, 32]);
            assert!(y.min() >= 0.0);
            for (k, sk) in cache.skips.iter().enumerate().skip(1) {
                assert_eq!(sk.dims(), &[m.schedule[k - 1], 32 >> k, 32 >> k]);
            }
            assert_eq!(cache.tail.y0.dims(), &[2, 32, 32]);
        }
    }

    #[test]
    fn zero_model_zero_output() {
        let m = build_model(Variant::VNet, 1, 1, (2, 2)).unwrap();
        let s = zeroed(&m);
        let y = model_predict(&m, &s, &Tensor::zeros(&[1, 2, 2])).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn down_block_zero_input() {
        let m = build_model(Variant::VNet, 5, 16, (32, 32)).unwrap();
        let s: ParamStore<f32> = init_params(&m, &mut LcgState::seeded(1));
        let (x1, _) = down_block(&s, &m.down[0], &Tensor::zeros(&[1, 32, 32]), None).unwrap();
        assert_eq!(x1.dims(), &[256, 16, 16]);
        assert!(x1.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn up_block_shape_at_top() {
        let m = build_model(Variant::VNet, 5, 16, (32, 32)).unwrap();
        let s: ParamStore<f32> = init_params(&m, &mut LcgState::seeded(1));
        let (y4, c) = up_block(&s, &m.up[0], &Tensor::full(&[16, 1, 1], 1.0), &Tensor::full(&[32, 2, 2], 0.5)).unwrap();
        assert_eq!(y4.dims(), &[32, 2, 2]);
        assert_eq!(c.merged.channels(), 64);
        assert!(up_block(&s, &m.up[0], &Tensor::full(&[16, 1, 1], 1.0), &Tensor::full(&[16, 2, 2], 0.5)).is_err());
    }

    #[test]
    fn infer_is_deterministic() {
        let m = build_model(Variant::VNet, 2, 2, (8, 8)).unwrap();
        let s: ParamStore<f32> = init_params(&m, &mut LcgState::seeded(5));
        let x = Tensor::from_fn(&[1, 8, 8], |i| (i as f32).cos());
        let a = model_predict(&m, &s, &x).unwrap();
        let b = model_predict(&m, &s, &x).unwrap();
        assert_eq!(a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_grads() {
        let m = build_model(Variant::VNet, 2, 2, (8, 8)).unwrap();
        let mut s: ParamStore<f64> = init_params(&m, &mut LcgState::seeded(5));
        let x = Tensor::from_fn(&[1, 8, 8], |i| (i as f64).cos());
        let (_, cache) = model_forward(&m, &s, &x, Mode::Infer).unwrap();
        model_backward(&m, &mut s, cache, &Tensor::zeros(&[1, 8, 8])).unwrap();
        assert!(s.iter().all(|p| p.grad.data().iter().all(|&g| g == 0.0)));
    }

    #[test]
    fn stale_cache_rejected() {
        let m = build_model(Variant::VNet, 1, 1, (2, 2)).unwrap();
        let mut s: ParamStore<f64> = init_params(&m, &mut LcgState::seeded(5));
        let (_, cache) = model_forward(&m, &s, &Tensor::full(&[1, 2, 2], 1.0), Mode::Infer).unwrap();
        s.bump_generation();
        assert!(matches!(
            model_backward(&m, &mut s, cache, &Tensor::zeros(&[1, 2, 2])),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn wrong_input_shape_rejected() {
        let m = build_model(Variant::VNet, 2, 2, (8, 8)).unwrap();
        let s: ParamStore<f32> = init_params(&m, &mut LcgState::seeded(5));
        assert!(model_predict(&m, &s, &Tensor::zeros(&[1, 16, 16])).is_err());
    }
}
