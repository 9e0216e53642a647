use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPSILON: f64 = 1e-5;

/// Affine parameters and running statistics of one batch-norm layer.
#[derive(Debug, Clone)]
pub struct BatchNormState<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
}

impl<T: Scalar> BatchNormState<T> {
    /// Identity affine, zero mean, unit variance.
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::ones(&[channels]),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::ones(&[channels]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchNormTrainOutput<T> {
    pub output: Tensor<T>,
    /// Normalized input before the affine map.
    pub normalized: Tensor<T>,
    pub inv_std: Vec<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

fn check<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = x.nchw()?;
    if gamma.dims() != [c] || beta.dims() != [c] {
        return Err(Error::shape(format!(
            "batch norm over {c} channels got gamma {:?}, beta {:?}",
            gamma.dims(),
            beta.dims()
        )));
    }
    Ok((n, c, h * w))
}

/// Visits every element of channel `ch` in `(sample, pixel)` order.
fn channel_iter<T: Copy>(data: &[T], n: usize, c: usize, hw: usize, ch: usize) -> impl Iterator<Item = T> + '_ {
    (0..n).flat_map(move |b| data[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().copied())
}

/// Training-mode batch norm: batch statistics normalize the input and the
/// running statistics move by [`BN_MOMENTUM`] (unbiased variance).
pub fn batch_norm_train<T: Scalar>(
    x: &Tensor<T>,
    state: &BatchNormState<T>,
) -> Result<BatchNormTrainOutput<T>> {
    let (n, c, hw) = check(x, &state.gamma, &state.beta)?;
    let count = n * hw;
    let m = T::from_usize(count).expect("count");
    let eps = T::from_float(BN_EPSILON);
    let mom = T::from_float(BN_MOMENTUM);
    let mut normalized = vec![T::zero(); x.numel()];
    let mut output = vec![T::zero(); x.numel()];
    let mut inv_std = Vec::with_capacity(c);
    let mut run_mean = state.running_mean.data().to_vec();
    let mut run_var = state.running_var.data().to_vec();
    for ch in 0..c {
        // shifted by the first element: exact for constant channels
        let pivot = x.data()[ch * hw];
        let mean = pivot + channel_iter(x.data(), n, c, hw, ch).fold(T::zero(), |s, v| s + (v - pivot)) / m;
        let sq = channel_iter(x.data(), n, c, hw, ch).fold(T::zero(), |s, v| s + (v - mean) * (v - mean));
        let var = sq / m;
        let istd = T::one() / (var + eps).sqrt();
        inv_std.push(istd);
        let (g, bt) = (state.gamma.data()[ch], state.beta.data()[ch]);
        for b in 0..n {
            let range = (b * c + ch) * hw..(b * c + ch + 1) * hw;
            for i in range {
                let xh = (x.data()[i] - mean) * istd;
                normalized[i] = xh;
                output[i] = g * xh + bt;
            }
        }
        let unbiased = sq / T::from_usize(count.saturating_sub(1).max(1)).expect("count");
        run_mean[ch] = (T::one() - mom) * run_mean[ch] + mom * mean;
        run_var[ch] = (T::one() - mom) * run_var[ch] + mom * unbiased;
    }
    Ok(BatchNormTrainOutput {
        output: Tensor::new(x.dims(), output)?,
        normalized: Tensor::new(x.dims(), normalized)?,
        inv_std,
        running_mean: Tensor::new(&[c], run_mean)?,
        running_var: Tensor::new(&[c], run_var)?,
    })
}

pub fn batch_norm_train_backward<T: Scalar>(
    normalized: &Tensor<T>,
    inv_std: &[T],
    gamma: &Tensor<T>,
    grad: &Tensor<T>,
) -> Result<BatchNormGrads<T>> {
    let (n, c, h, w) = normalized.nchw()?;
    let hw = h * w;
    let m = T::from_usize(n * hw).expect("count");
    let mut gx = vec![T::zero(); normalized.numel()];
    let mut gg = Vec::with_capacity(c);
    let mut gbeta = Vec::with_capacity(c);
    for ch in 0..c {
        let sum_g = channel_iter(grad.data(), n, c, hw, ch).fold(T::zero(), |s, v| s + v);
        let sum_gx = channel_iter(grad.data(), n, c, hw, ch)
            .zip(channel_iter(normalized.data(), n, c, hw, ch))
            .fold(T::zero(), |s, (g, xh)| s + g * xh);
        gg.push(sum_gx);
        gbeta.push(sum_g);
        let k = gamma.data()[ch] * inv_std[ch] / m;
        for b in 0..n {
            for i in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                gx[i] = k * (m * grad.data()[i] - sum_g - normalized.data()[i] * sum_gx);
            }
        }
    }
    Ok(BatchNormGrads {
        input: Tensor::new(normalized.dims(), gx)?,
        gamma: Tensor::new(&[c], gg)?,
        beta: Tensor::new(&[c], gbeta)?,
    })
}

/// Eval-mode batch norm with the running statistics. Returns the output,
/// the normalized input and the per-channel inverse standard deviation.
pub fn batch_norm_eval<T: Scalar>(
    x: &Tensor<T>,
    state: &BatchNormState<T>,
) -> Result<(Tensor<T>, Tensor<T>, Vec<T>)> {
    let (n, c, hw) = check(x, &state.gamma, &state.beta)?;
    if state.running_mean.dims() != [c] || state.running_var.dims() != [c] {
        return Err(Error::shape("running statistics do not match channel count"));
    }
    let eps = T::from_float(BN_EPSILON);
    let inv_std: Vec<T> =
        state.running_var.data().iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut normalized = vec![T::zero(); x.numel()];
    let mut output = vec![T::zero(); x.numel()];
    for b in 0..n {
        for ch in 0..c {
            let (mu, istd) = (state.running_mean.data()[ch], inv_std[ch]);
            let (g, bt) = (state.gamma.data()[ch], state.beta.data()[ch]);
            for i in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                let xh = (x.data()[i] - mu) * istd;
                normalized[i] = xh;
                output[i] = g * xh + bt;
            }
        }
    }
    Ok((Tensor::new(x.dims(), output)?, Tensor::new(x.dims(), normalized)?, inv_std))
}

pub fn batch_norm_eval_backward<T: Scalar>(
    normalized: &Tensor<T>,
    inv_std: &[T],
    gamma: &Tensor<T>,
    grad: &Tensor<T>,
) -> Result<BatchNormGrads<T>> {
    let (n, c, h, w) = normalized.nchw()?;
    let hw = h * w;
    let mut gx = vec![T::zero(); normalized.numel()];
    let mut gg = vec![T::zero(); c];
    let mut gbeta = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let k = gamma.data()[ch] * inv_std[ch];
            for i in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                let g = grad.data()[i];
                gx[i] = k * g;
                gg[ch] = gg[ch] + g * normalized.data()[i];
                gbeta[ch] = gbeta[ch] + g;
            }
        }
    }
    Ok(BatchNormGrads {
        input: Tensor::new(normalized.dims(), gx)?,
        gamma: Tensor::new(&[c], gg)?,
        beta: Tensor::new(&[c], gbeta)?,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn eval_with_unit_stats_is_near_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::<f64>::randn(&[2, 3, 4, 4], 1.0, &mut rng);
        let (y, _, _) = batch_norm_eval(&x, &BatchNormState::new(3)).unwrap();
        let scale = 1.0 / (1.0 + BN_EPSILON).sqrt();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b * scale).abs() < 1e-15);
        }
        assert!(y.max_abs_diff(&x).unwrap() < 1e-4);
    }

    #[test]
    fn train_normalizes_per_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::<f64>::randn(&[4, 3, 5, 5], 2.0, &mut rng).map(|v| v + 3.0);
        let out = batch_norm_train(&x, &BatchNormState::new(3)).unwrap();
        for ch in 0..3 {
            let vals: Vec<f64> = channel_iter(out.normalized.data(), 4, 3, 25, ch).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn constant_channel_normalizes_to_zero() {
        let x = Tensor::<f64>::full(&[2, 1, 3, 3], 4.2);
        let out = batch_norm_train(&x, &BatchNormState::new(1)).unwrap();
        assert!(out.normalized.data().iter().all(|&v| v == 0.0));
        assert!(out.output.is_finite());
    }

    #[test]
    fn running_stats_move_by_momentum() {
        let x = Tensor::<f64>::from_fn(&[1, 1, 1, 4], |i| i as f64);
        let out = batch_norm_train(&x, &BatchNormState::new(1)).unwrap();
        // mean 1.5, unbiased var 5/3
        assert!((out.running_mean.data()[0] - 0.15).abs() < 1e-15);
        assert!((out.running_var.data()[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-15);
    }
}
