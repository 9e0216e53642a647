use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `(outer, axis_len, inner)` decomposition of `dims` around `axis`.
fn around(dims: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= dims.len() {
        return Err(Error::shape(format!("axis {axis} out of range for dims {dims:?}")));
    }
    let outer = dims[..axis].iter().product();
    let inner = dims[axis + 1..].iter().product();
    Ok((outer, dims[axis], inner))
}

/// Concatenates tensors along `axis`; all other dims must agree.
pub fn concat<T: Scalar>(xs: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = xs.first().ok_or_else(|| Error::shape("concat of zero tensors"))?;
    let (outer, _, inner) = around(first.dims(), axis)?;
    let mut total = 0;
    for x in xs {
        let same_rank = x.ndim() == first.ndim();
        let others_match = same_rank
            && x.dims().iter().zip(first.dims()).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !others_match {
            return Err(Error::shape(format!(
                "cannot concat {:?} with {:?} along axis {axis}",
                x.dims(),
                first.dims()
            )));
        }
        total += x.dims()[axis];
    }
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for x in xs {
            let len = x.dims()[axis] * inner;
            out.extend_from_slice(&x.data()[o * len..(o + 1) * len]);
        }
    }
    let mut dims = first.dims().to_vec();
    dims[axis] = total;
    Tensor::new(&dims, out)
}

/// Contiguous slice `[start, start + len)` along `axis`.
pub fn slice_axis<T: Scalar>(x: &Tensor<T>, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
    let (outer, alen, inner) = around(x.dims(), axis)?;
    if len == 0 || start + len > alen {
        return Err(Error::shape(format!(
            "slice [{start}, {}) out of range for axis {axis} of {:?}",
            start + len,
            x.dims()
        )));
    }
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * alen + start) * inner;
        out.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    let mut dims = x.dims().to_vec();
    dims[axis] = len;
    Tensor::new(&dims, out)
}

/// Scatters a slice gradient back into a zero tensor of `input_dims`.
pub fn slice_axis_backward<T: Scalar>(
    input_dims: &[usize],
    axis: usize,
    start: usize,
    grad: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (outer, alen, inner) = around(input_dims, axis)?;
    let len = grad.dims()[axis];
    let mut out = vec![T::zero(); input_dims.iter().product()];
    for o in 0..outer {
        let base = (o * alen + start) * inner;
        out[base..base + len * inner].copy_from_slice(&grad.data()[o * len * inner..(o + 1) * len * inner]);
    }
    Tensor::new(input_dims, out)
}

/// Splits along `axis` into consecutive pieces of the given sizes.
pub fn split<T: Scalar>(x: &Tensor<T>, axis: usize, sizes: &[usize]) -> Result<Vec<Tensor<T>>> {
    let (_, alen, _) = around(x.dims(), axis)?;
    let total: usize = sizes.iter().sum();
    if total != alen {
        return Err(Error::shape(format!(
            "split sizes {sizes:?} sum to {total}, axis {axis} has {alen}"
        )));
    }
    let mut start = 0;
    sizes
        .iter()
        .map(|&len| {
            let piece = slice_axis(x, axis, start, len);
            start += len;
            piece
        })
        .collect()
}

pub fn split_channels<T: Scalar>(x: &Tensor<T>, sizes: &[usize]) -> Result<Vec<Tensor<T>>> {
    x.nchw()?;
    split(x, 1, sizes)
}

pub fn concat_channels<T: Scalar>(xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    for x in xs {
        x.nchw()?;
    }
    concat(xs, 1)
}
