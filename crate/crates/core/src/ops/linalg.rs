use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Row-major `out[m x n] += a[m x k] * b[k x n]` with the sum over `k`
/// taken left to right for every output element.
pub(crate) fn gemm_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

fn transpose_raw<T: Scalar>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = x[i * cols + j];
        }
    }
    out
}

/// Matrix product `[m x k] * [k x n] -> [m x n]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.matrix_dims()?;
    let (k2, n) = b.matrix_dims()?;
    if k != k2 {
        return Err(Error::shape(format!(
            "matmul inner dims differ: lhs {:?}, rhs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let mut out = vec![T::zero(); m * n];
    gemm_acc(a.data(), b.data(), &mut out, m, k, n);
    Tensor::new(&[m, n], out)
}

/// Gradients of `matmul(a, b)`: `(g * b^T, a^T * g)`.
pub fn matmul_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    grad: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (m, k) = a.matrix_dims()?;
    let (_, n) = b.matrix_dims()?;
    let bt = transpose_raw(b.data(), k, n);
    let at = transpose_raw(a.data(), m, k);
    let mut ga = vec![T::zero(); m * k];
    gemm_acc(grad.data(), &bt, &mut ga, m, n, k);
    let mut gb = vec![T::zero(); k * n];
    gemm_acc(&at, grad.data(), &mut gb, k, m, n);
    Ok((Tensor::new(&[m, k], ga)?, Tensor::new(&[k, n], gb)?))
}

fn batch_dims<T: Scalar>(x: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *x.dims() {
        [b, m, n] => Ok((b, m, n)),
        _ => Err(Error::shape(format!("expected a rank-3 batch of matrices, got {:?}", x.dims()))),
    }
}

/// Batched matrix product `[B x m x k] * [B x k x n] -> [B x m x n]`.
pub fn bmm<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (batch, m, k) = batch_dims(a)?;
    let (batch2, k2, n) = batch_dims(b)?;
    if batch != batch2 || k != k2 {
        return Err(Error::shape(format!(
            "bmm operands incompatible: lhs {:?}, rhs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let mut out = vec![T::zero(); batch * m * n];
    out.par_chunks_mut(m * n).enumerate().for_each(|(i, o)| {
        gemm_acc(&a.data()[i * m * k..(i + 1) * m * k], &b.data()[i * k * n..(i + 1) * k * n], o, m, k, n)
    });
    Tensor::new(&[batch, m, n], out)
}

pub fn bmm_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    grad: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (batch, m, k) = batch_dims(a)?;
    let (_, _, n) = batch_dims(b)?;
    let mut ga = vec![T::zero(); batch * m * k];
    let mut gb = vec![T::zero(); batch * k * n];
    ga.par_chunks_mut(m * k).zip(gb.par_chunks_mut(k * n)).enumerate().for_each(
        |(i, (ga_i, gb_i))| {
            let a_i = &a.data()[i * m * k..(i + 1) * m * k];
            let b_i = &b.data()[i * k * n..(i + 1) * k * n];
            let g_i = &grad.data()[i * m * n..(i + 1) * m * n];
            gemm_acc(g_i, &transpose_raw(b_i, k, n), ga_i, m, n, k);
            gemm_acc(&transpose_raw(a_i, m, k), g_i, gb_i, k, m, n);
        },
    );
    Ok((Tensor::new(&[batch, m, k], ga)?, Tensor::new(&[batch, k, n], gb)?))
}

/// Swaps the two trailing axes of a tensor of rank >= 2.
pub fn transpose_last2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let nd = x.ndim();
    if nd < 2 {
        return Err(Error::shape(format!("transpose needs rank >= 2, got {:?}", x.dims())));
    }
    let (rows, cols) = (x.dims()[nd - 2], x.dims()[nd - 1]);
    let plane = rows * cols;
    let mut out = Vec::with_capacity(x.numel());
    for chunk in x.data().chunks(plane) {
        out.extend(transpose_raw(chunk, rows, cols));
    }
    let mut dims = x.dims().to_vec();
    dims.swap(nd - 2, nd - 1);
    Tensor::new(&dims, out)
}
