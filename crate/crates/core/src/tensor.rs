//! Dense real tensors.
//!
//! Layout is row-major over `dims`. Rank-3 tensors are `(channels, rows, cols)`;
//! rank-4 kernels are `(filters, in_channels, kernel_rows, kernel_cols)`.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Element type tag used by the binary tensor format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32 = 0,
    F64 = 1,
}

impl Dtype {
    pub fn from_tag(tag: u8) -> Option<Dtype> {
        match tag {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Floating-point element type. `f32` is used for training, `f64` for gradient checks.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + Send
    + Sync
    + 'static
{
    const DTYPE: Dtype;

    /// `c = alpha * a @ b + beta * c`, with arbitrary row/column strides.
    ///
    /// `a` is `m x k`, `b` is `k x n`, `c` is `m x n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_row_stride: isize,
    );

    fn write_le(self, out: &mut Vec<u8>);

    fn read_le(bytes: &[u8]) -> Self;

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }
}

fn span(rows: usize, cols: usize, strides: (isize, isize)) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    (rows - 1) * strides.0 as usize + (cols - 1) * strides.1 as usize + 1
}

macro_rules! impl_real {
    ($t:ty, $tag:expr, $gemm:path) => {
        impl Real for $t {
            const DTYPE: Dtype = $tag;

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                beta: Self,
                c: &mut [Self],
                c_row_stride: isize,
            ) {
                assert!(a_strides.0 >= 0 && a_strides.1 >= 0);
                assert!(b_strides.0 >= 0 && b_strides.1 >= 0 && c_row_stride >= 0);
                assert!(a.len() >= span(m, k, a_strides), "gemm: lhs too short");
                assert!(b.len() >= span(k, n, b_strides), "gemm: rhs too short");
                assert!(c.len() >= span(m, n, (c_row_stride, 1)), "gemm: out too short");
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: all three operands were bounds-checked against their strides above.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        a_strides.0,
                        a_strides.1,
                        b.as_ptr(),
                        b_strides.0,
                        b_strides.1,
                        beta,
                        c.as_mut_ptr(),
                        c_row_stride,
                        1,
                    );
                }
            }

            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            fn read_le(bytes: &[u8]) -> Self {
                <$t>::from_le_bytes(bytes.try_into().expect("element width"))
            }
        }
    };
}

impl_real!(f32, Dtype::F32, matrixmultiply::sgemm);
impl_real!(f64, Dtype::F64, matrixmultiply::dgemm);

/// Dense tensor with owned storage.
#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}", self.dims)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl<T: Real> Tensor<T> {
    pub fn new(dims: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if dims.is_empty() || dims.iter().any(|&d| d == 0) {
            return Err(Error::dim(format!("invalid dims {dims:?}")));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::dim(format!(
                "dims {dims:?} need {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn full(dims: &[usize], value: T) -> Self {
        assert!(
            !dims.is_empty() && dims.iter().all(|&d| d > 0),
            "invalid dims {dims:?}"
        );
        let n = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::full(dims, T::zero())
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let mut t = Self::zeros(dims);
        for (i, v) in t.data.iter_mut().enumerate() {
            *v = f(i);
        }
        t
    }

    /// Rank-3 tensor `(channels, rows, cols)`.
    pub fn chw(channels: usize, rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::new(vec![channels, rows, cols], data)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// `(channels, rows, cols)` of a rank-3 tensor.
    pub fn shape3(&self) -> Result<(usize, usize, usize)> {
        match self.dims[..] {
            [c, r, w] => Ok((c, r, w)),
            _ => Err(Error::dim(format!("expected rank 3, got {:?}", self.dims))),
        }
    }

    pub fn channels(&self) -> usize {
        self.dims[self.dims.len().saturating_sub(3)]
    }

    pub fn reshape(mut self, dims: &[usize]) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != self.data.len() || dims.iter().any(|&d| d == 0) {
            return Err(Error::dim(format!(
                "cannot reshape {:?} into {dims:?}",
                self.dims
            )));
        }
        self.dims = dims.to_vec();
        Ok(self)
    }

    pub fn at3(&self, c: usize, r: usize, w: usize) -> T {
        let (_, rows, cols) = (self.dims[0], self.dims[1], self.dims[2]);
        self.data[(c * rows + r) * cols + w]
    }

    pub fn set3(&mut self, c: usize, r: usize, w: usize, v: T) {
        let (rows, cols) = (self.dims[1], self.dims[2]);
        self.data[(c * rows + r) * cols + w] = v;
    }

    /// Slice of one channel of a rank-3 tensor.
    pub fn channel(&self, c: usize) -> &[T] {
        let plane = self.dims[1] * self.dims[2];
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same_dims(other)?;
        Ok(Tensor {
            dims: self.dims.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_same_dims(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_usize(self.len()).unwrap()
    }

    pub fn min(&self) -> T {
        self.data.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max(&self) -> T {
        self.data.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap()).unwrap())
                .collect(),
        }
    }

    pub fn check_same_dims(&self, other: &Self) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::dim(format!(
                "shape mismatch {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    /// Copy a `rows x cols` window anchored at `(r0, c0)` out of every channel.
    pub fn crop(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Result<Self> {
        let (ch, h, w) = self.shape3()?;
        if r0 + rows > h || c0 + cols > w {
            return Err(Error::dim(format!(
                "window {rows}x{cols} at ({r0},{c0}) exceeds {h}x{w}"
            )));
        }
        let mut data = Vec::with_capacity(ch * rows * cols);
        for c in 0..ch {
            let plane = self.channel(c);
            for r in r0..r0 + rows {
                data.extend_from_slice(&plane[r * w + c0..r * w + c0 + cols]);
            }
        }
        Tensor::chw(ch, rows, cols, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_dims() {
        assert!(Tensor::<f32>::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::<f32>::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::<f32>::new(vec![], vec![]).is_err());
    }

    #[test]
    fn crop_takes_window() {
        let t = Tensor::<f32>::from_fn(&[1, 4, 4], |i| i as f32);
        let c = t.crop(1, 2, 2, 2).unwrap();
        assert_eq!(c.data(), &[6.0, 7.0, 10.0, 11.0]);
        assert!(t.crop(3, 3, 2, 2).is_err());
    }

    #[test]
    fn gemm_transposed_operands() {
        // a = [[1,2],[3,4]] read transposed, b = identity
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [1.0f64, 0.0, 0.0, 1.0];
        let mut c = [0.0f64; 4];
        f64::gemm(2, 2, 2, &a, (1, 2), &b, (2, 1), 0.0, &mut c, 2);
        assert_eq!(c, [1.0, 3.0, 2.0, 4.0]);
    }
}
