//! Forward and backward primitives the networks are assembled from.
//!
//! Convolutions are cross-correlations with "same" zero padding: a kernel of
//! size `kh x kw` reads rows `r - kh/2 .. r - kh/2 + kh`, so a 3x3 kernel is
//! centred and a 2x2 kernel pads one row/column on the low side only. Kernels
//! are therefore the flipped form of the textbook convolution kernel.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Gradients produced by [`conv2d_backward`].
#[derive(Debug, Clone)]
pub struct ConvGrads<T: Real> {
    pub input: Option<Tensor<T>>,
    pub kernel: Tensor<T>,
    pub bias: Vec<T>,
}

fn kernel_shape<T: Real>(x: &Tensor<T>, k: &Tensor<T>) -> Result<[usize; 4]> {
    let (cin, _, _) = x.shape3()?;
    let kd: [usize; 4] = k
        .dims()
        .try_into()
        .map_err(|_| Error::dim(format!("kernel must be rank 4, got {:?}", k.dims())))?;
    if kd[1] != cin {
        return Err(Error::dim(format!(
            "kernel expects {} input channels, tensor has {cin}",
            kd[1]
        )));
    }
    if !(1..=3).contains(&kd[2]) || !(1..=3).contains(&kd[3]) {
        return Err(Error::dim(format!(
            "kernel spatial size {}x{} unsupported",
            kd[2], kd[3]
        )));
    }
    Ok(kd)
}

/// Unrolls `x` into a `(cin*kh*kw) x (rows*cols)` matrix of shifted copies.
fn im2col<T: Real>(x: &Tensor<T>, kh: usize, kw: usize, out: &mut Vec<T>) {
    let (cin, rows, cols) = x.shape3().expect("rank 3");
    let (ph, pw) = (kh / 2, kw / 2);
    let plane = rows * cols;
    out.clear();
    out.resize(cin * kh * kw * plane, T::zero());
    for h in 0..cin {
        let src = x.channel(h);
        for i in 0..kh {
            for j in 0..kw {
                let dst = &mut out[((h * kh + i) * kw + j) * plane..][..plane];
                for r in 0..rows {
                    let sr = r as isize + i as isize - ph as isize;
                    if sr < 0 || sr >= rows as isize {
                        continue;
                    }
                    let sr = sr as usize;
                    let (c_lo, c_hi) = (pw.saturating_sub(j), (cols + pw).saturating_sub(j).min(cols));
                    for c in c_lo..c_hi {
                        dst[r * cols + c] = src[sr * cols + c + j - pw];
                    }
                }
            }
        }
    }
}

/// Scatter-adds a column matrix back onto the input grid (adjoint of `im2col`).
fn col2im<T: Real>(cols_m: &[T], dims: (usize, usize, usize), kh: usize, kw: usize) -> Tensor<T> {
    let (cin, rows, cols) = dims;
    let (ph, pw) = (kh / 2, kw / 2);
    let plane = rows * cols;
    let mut out = Tensor::zeros(&[cin, rows, cols]);
    let data = out.data_mut();
    for h in 0..cin {
        for i in 0..kh {
            for j in 0..kw {
                let src = &cols_m[((h * kh + i) * kw + j) * plane..][..plane];
                for r in 0..rows {
                    let sr = r as isize + i as isize - ph as isize;
                    if sr < 0 || sr >= rows as isize {
                        continue;
                    }
                    let sr = sr as usize;
                    let (c_lo, c_hi) = (pw.saturating_sub(j), (cols + pw).saturating_sub(j).min(cols));
                    let dst = &mut data[h * plane + sr * cols..][..cols];
                    for c in c_lo..c_hi {
                        dst[c + j - pw] += src[r * cols + c];
                    }
                }
            }
        }
    }
    out
}

/// "Same"-padded 2D convolution: `x (cin,R,C)`, `k (m,cin,kh,kw)` → `(m,R,C)`.
pub fn conv2d_forward<T: Real>(x: &Tensor<T>, k: &Tensor<T>, bias: &[T]) -> Result<Tensor<T>> {
    let [m, cin, kh, kw] = kernel_shape(x, k)?;
    if bias.len() != m {
        return Err(Error::dim(format!("bias has {} entries, kernel has {m} filters", bias.len())));
    }
    let (_, rows, cols) = x.shape3()?;
    let plane = rows * cols;
    let depth = cin * kh * kw;
    let mut unrolled = Vec::new();
    im2col(x, kh, kw, &mut unrolled);
    let mut out = vec![T::zero(); m * plane];
    for (f, chunk) in out.chunks_mut(plane).enumerate() {
        chunk.fill(bias[f]);
    }
    T::gemm(
        m,
        depth,
        plane,
        k.data(),
        (depth as isize, 1),
        &unrolled,
        (plane as isize, 1),
        T::one(),
        &mut out,
        plane as isize,
    );
    Tensor::chw(m, rows, cols, out)
}

/// Adjoint of [`conv2d_forward`]. Set `need_input` to false to skip the input gradient.
pub fn conv2d_backward_with<T: Real>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    k: &Tensor<T>,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let [m, cin, kh, kw] = kernel_shape(x, k)?;
    let (_, rows, cols) = x.shape3()?;
    if grad_out.dims() != [m, rows, cols] {
        return Err(Error::dim(format!(
            "output gradient {:?} does not match conv output ({m},{rows},{cols})",
            grad_out.dims()
        )));
    }
    let plane = rows * cols;
    let depth = cin * kh * kw;
    let g = grad_out.data();

    let bias: Vec<T> = g.chunks(plane).map(|c| c.iter().copied().sum()).collect();

    let mut unrolled = Vec::new();
    im2col(x, kh, kw, &mut unrolled);
    let mut gk = vec![T::zero(); m * depth];
    T::gemm(
        m,
        plane,
        depth,
        g,
        (plane as isize, 1),
        &unrolled,
        (1, plane as isize),
        T::zero(),
        &mut gk,
        depth as isize,
    );
    let kernel = Tensor::new(k.dims().to_vec(), gk)?;

    let input = if need_input {
        let mut gcols = unrolled;
        T::gemm(
            depth,
            m,
            plane,
            k.data(),
            (1, depth as isize),
            g,
            (plane as isize, 1),
            T::zero(),
            &mut gcols,
            plane as isize,
        );
        Some(col2im(&gcols, (cin, rows, cols), kh, kw))
    } else {
        None
    };
    Ok(ConvGrads { input, kernel, bias })
}

/// Adjoint of [`conv2d_forward`]: gradients w.r.t. input, kernel and bias.
pub fn conv2d_backward<T: Real>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    k: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Vec<T>)> {
    let g = conv2d_backward_with(grad_out, x, k, true)?;
    Ok((g.input.expect("requested"), g.kernel, g.bias))
}

/// Winning positions of a 2x2 max-pool, as flat indices into the pooled input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndex {
    pub input_dims: [usize; 3],
    pub argmax: Vec<usize>,
}

/// 2x2 max-pool with stride 2. Ties go to the first maximum in row-major order.
pub fn maxpool2x2_forward<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, PoolIndex)> {
    let (ch, rows, cols) = x.shape3()?;
    if rows % 2 != 0 || cols % 2 != 0 {
        return Err(Error::dim(format!("max-pool needs even spatial dims, got {rows}x{cols}")));
    }
    let (orows, ocols) = (rows / 2, cols / 2);
    let src = x.data();
    let mut out = Vec::with_capacity(ch * orows * ocols);
    let mut argmax = Vec::with_capacity(ch * orows * ocols);
    for c in 0..ch {
        let base = c * rows * cols;
        for r in 0..orows {
            for w in 0..ocols {
                let top = base + 2 * r * cols + 2 * w;
                let mut best = top;
                for idx in [top + 1, top + cols, top + cols + 1] {
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                out.push(src[best]);
                argmax.push(best);
            }
        }
    }
    Ok((
        Tensor::chw(ch, orows, ocols, out)?,
        PoolIndex {
            input_dims: [ch, rows, cols],
            argmax,
        },
    ))
}

/// Routes each pooled gradient back to the position that won the forward max.
pub fn maxpool2x2_backward<T: Real>(grad_y: &Tensor<T>, index: &PoolIndex) -> Result<Tensor<T>> {
    let [ch, rows, cols] = index.input_dims;
    if grad_y.dims() != [ch, rows / 2, cols / 2] {
        return Err(Error::dim(format!(
            "pool gradient {:?} does not match recorded input {:?}",
            grad_y.dims(),
            index.input_dims
        )));
    }
    let mut gx = Tensor::zeros(&index.input_dims);
    let dst = gx.data_mut();
    for (&idx, &g) in index.argmax.iter().zip(grad_y.data()) {
        dst[idx] += g;
    }
    Ok(gx)
}

/// Nearest-neighbour 2x upsampling: `out(m,r,c) = x(m, r/2, c/2)`.
pub fn upsample_nearest2x<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (ch, rows, cols) = x.shape3()?;
    let (orows, ocols) = (2 * rows, 2 * cols);
    let src = x.data();
    let mut out = Vec::with_capacity(ch * orows * ocols);
    for c in 0..ch {
        for r in 0..orows {
            let row = &src[(c * rows + r / 2) * cols..][..cols];
            for w in 0..ocols {
                out.push(row[w / 2]);
            }
        }
    }
    Tensor::chw(ch, orows, ocols, out)
}

/// Adjoint of [`upsample_nearest2x`]: sums each 2x2 block of the gradient.
pub fn upsample_nearest2x_backward<T: Real>(grad: &Tensor<T>) -> Result<Tensor<T>> {
    let (ch, rows, cols) = grad.shape3()?;
    if rows % 2 != 0 || cols % 2 != 0 {
        return Err(Error::dim(format!("upsample gradient must have even dims, got {rows}x{cols}")));
    }
    let g = grad.data();
    let mut out = Tensor::zeros(&[ch, rows / 2, cols / 2]);
    let dst = out.data_mut();
    for c in 0..ch {
        for r in 0..rows {
            for w in 0..cols {
                dst[(c * (rows / 2) + r / 2) * (cols / 2) + w / 2] += g[(c * rows + r) * cols + w];
            }
        }
    }
    Ok(out)
}

/// Stacks `a` then `b` along the channel axis.
pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (ca, ra, wa) = a.shape3()?;
    let (cb, rb, wb) = b.shape3()?;
    if (ra, wa) != (rb, wb) {
        return Err(Error::dim(format!(
            "cannot concatenate {ra}x{wa} with {rb}x{wb}"
        )));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::chw(ca + cb, ra, wa, data)
}

/// Splits a concatenated gradient at channel `at` (backward of [`concat_channels`]).
pub fn split_channels<T: Real>(grad: &Tensor<T>, at: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let (ch, rows, cols) = grad.shape3()?;
    if at == 0 || at >= ch {
        return Err(Error::dim(format!("split point {at} outside 1..{ch}")));
    }
    let (lo, hi) = grad.data().split_at(at * rows * cols);
    Ok((
        Tensor::chw(at, rows, cols, lo.to_vec())?,
        Tensor::chw(ch - at, rows, cols, hi.to_vec())?,
    ))
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Multiplies `grad` by the indicator `x > 0`, where `x` is the ReLU input
/// (or its output; both give the same mask).
pub fn relu_backward<T: Real>(x: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    x.zip_map(grad, |v, g| if v > T::zero() { g } else { T::zero() })
}

pub fn elementwise_sub<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.zip_map(b, |x, y| x - y)
}

/// Gradients of `a - b` with respect to `a` and `b`.
pub fn elementwise_sub_backward<T: Real>(grad: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    (grad.clone(), grad.map(|g| -g))
}
