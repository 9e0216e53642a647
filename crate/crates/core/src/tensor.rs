use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major tensor. Feature maps use the `N x C x H x W` layout.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(dims: &[usize], data: Vec<T>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::shape(format!("dims must be non-empty and positive, got {dims:?}")));
        }
        let numel: usize = dims.iter().product();
        if numel != data.len() {
            return Err(Error::shape(format!(
                "dims {dims:?} need {numel} elements, buffer has {}",
                data.len()
            )));
        }
        Ok(Self { dims: dims.to_vec(), data })
    }

    pub fn full(dims: &[usize], value: T) -> Self {
        let numel = dims.iter().product();
        Self::new(dims, vec![value; numel]).expect("valid dims")
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::full(dims, T::zero())
    }

    pub fn ones(dims: &[usize]) -> Self {
        Self::full(dims, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self { dims: vec![1], data: vec![value] }
    }

    /// Builds a tensor by evaluating `f` at every flat index.
    pub fn from_fn(dims: &[usize], f: impl FnMut(usize) -> T) -> Self {
        let numel: usize = dims.iter().product();
        Self::new(dims, (0..numel).map(f).collect()).expect("valid dims")
    }

    /// Standard-normal entries scaled by `std`.
    pub fn randn<R: Rng + ?Sized>(dims: &[usize], std: f64, rng: &mut R) -> Self {
        Self::from_fn(dims, |_| {
            let z: f64 = StandardNormal.sample(rng);
            T::from_float(z * std)
        })
    }

    /// Uniform entries in `[lo, hi)`.
    pub fn rand_uniform<R: Rng + ?Sized>(dims: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        Self::from_fn(dims, |_| T::from_float(rng.random_range(lo..hi)))
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    /// Unpacks a rank-4 tensor into `(n, c, h, w)`.
    pub fn nchw(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.dims.as_slice() {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::shape(format!("expected an NCHW tensor, got dims {:?}", self.dims))),
        }
    }

    /// Unpacks a rank-2 tensor into `(rows, cols)`.
    pub fn matrix_dims(&self) -> Result<(usize, usize)> {
        match *self.dims.as_slice() {
            [m, n] => Ok((m, n)),
            _ => Err(Error::shape(format!("expected a matrix, got dims {:?}", self.dims))),
        }
    }

    /// Flat offset of `(n, c, h, w)` in an NCHW tensor.
    #[inline]
    pub fn offset4(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        let d = &self.dims;
        ((n * d[1] + c) * d[2] + h) * d[3] + w
    }

    #[inline]
    pub fn at4(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.offset4(n, c, h, w)]
    }

    #[inline]
    pub fn at2(&self, i: usize, j: usize) -> T {
        self.data[i * self.dims[1] + j]
    }

    pub fn item(&self) -> Result<T> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::Contract(format!("item() on tensor with dims {:?}", self.dims)))
        }
    }

    pub fn reshape(&self, dims: &[usize]) -> Result<Self> {
        Self::new(dims, self.data.clone())
    }

    pub fn into_reshape(self, dims: &[usize]) -> Result<Self> {
        Self::new(dims, self.data)
    }

    /// Token-major view `N x (H*W) x C` of an NCHW feature map.
    pub fn to_tokens(&self) -> Result<Self> {
        let (n, c, h, w) = self.nchw()?;
        let hw = h * w;
        let mut out = vec![T::zero(); self.numel()];
        for b in 0..n {
            for ch in 0..c {
                let src = &self.data[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                for (t, &v) in src.iter().enumerate() {
                    out[(b * hw + t) * c + ch] = v;
                }
            }
        }
        Self::new(&[n, hw, c], out)
    }

    /// Inverse of [`Tensor::to_tokens`].
    pub fn from_tokens(tokens: &Self, h: usize, w: usize) -> Result<Self> {
        let (n, hw, c) = match *tokens.dims() {
            [n, hw, c] if hw == h * w => (n, hw, c),
            _ => {
                return Err(Error::shape(format!(
                    "token tensor {:?} does not match spatial {h}x{w}",
                    tokens.dims()
                )))
            }
        };
        let mut out = vec![T::zero(); tokens.numel()];
        for b in 0..n {
            for t in 0..hw {
                for ch in 0..c {
                    out[(b * c + ch) * hw + t] = tokens.data[(b * hw + t) * c + ch];
                }
            }
        }
        Self::new(&[n, c, h, w], out)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { dims: self.dims.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::shape(format!(
                "elementwise operands differ: {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { dims: self.dims.clone(), data })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    /// In-place `self += other`; shapes must match.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::shape(format!(
                "accumulate into {:?} from {:?}",
                self.dims, other.dims
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    /// Sum in flat index order.
    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_usize(self.numel()).expect("usize fits")
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        Ok(self.sub(other)?.max_abs())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| U::from_float(v.as_f64())).collect(),
        }
    }

    /// Bitwise equality (distinguishes `-0.0` from `0.0`, treats equal NaN payloads as equal).
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.dims == other.dims
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
    }
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        write!(f, "Tensor<{}>{:?} [", std::any::type_name::<T>(), self.dims)?;
        for (i, v) in self.data.iter().take(PREVIEW).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v:?}")?;
        }
        if self.data.len() > PREVIEW {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}

/// Geometry of a 2-D convolution. `groups == in_channels` is depthwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
}

impl ConvSpec {
    /// 1x1 convolution, i.e. a per-pixel linear projection.
    pub const fn pointwise() -> Self {
        Self { kernel: (1, 1), stride: (1, 1), padding: (0, 0), groups: 1 }
    }

    /// Square depthwise convolution over `channels`.
    pub const fn depthwise(channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel: (kernel, kernel),
            stride: (stride, stride),
            padding: (padding, padding),
            groups: channels,
        }
    }

    /// Output spatial size `floor((H + 2p - k) / s) + 1` per axis.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let axis = |len: usize, k: usize, s: usize, p: usize| -> Result<usize> {
            if s == 0 || k == 0 {
                return Err(Error::config(format!("kernel and stride must be positive: {self:?}")));
            }
            let padded = len + 2 * p;
            if padded < k {
                return Err(Error::config(format!(
                    "input extent {len} with padding {p} is smaller than kernel {k}"
                )));
            }
            Ok((padded - k) / s + 1)
        };
        Ok((
            axis(h, self.kernel.0, self.stride.0, self.padding.0)?,
            axis(w, self.kernel.1, self.stride.1, self.padding.1)?,
        ))
    }
}
