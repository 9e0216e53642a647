use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::activation::softmax_rows;

/// Mean softmax cross-entropy of `logits [N x K]` against class indices.
/// Returns the loss and the row probabilities.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let (n, k) = logits.matrix_dims()?;
    if labels.len() != n {
        return Err(Error::shape(format!("{} labels for {n} rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::shape(format!("label {bad} out of range for {k} classes")));
    }
    let probs = softmax_rows(logits)?;
    let mut total = T::zero();
    for (row, &label) in logits.data().chunks(k).zip(labels) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let lse = max + row.iter().fold(T::zero(), |s, &v| s + (v - max).exp()).ln();
        total = total + (lse - row[label]);
    }
    Ok((total / T::from_usize(n).expect("batch"), probs))
}

/// `(p - onehot) / N`, scaled by the upstream scalar gradient.
pub fn cross_entropy_backward<T: Scalar>(probs: &Tensor<T>, labels: &[usize], grad: T) -> Tensor<T> {
    let k = probs.dims()[1];
    let scale = grad / T::from_usize(labels.len()).expect("batch");
    let mut out = probs.data().to_vec();
    for (row, &label) in out.chunks_mut(k).zip(labels) {
        row[label] = row[label] - T::one();
        row.iter_mut().for_each(|v| *v = *v * scale);
    }
    Tensor::new(probs.dims(), out).expect("same dims")
}
