use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Input window `[start, end)` feeding output cell `i` of an adaptive pool
/// from `len` to `target`: `start = floor(i*len/target)`,
/// `end = ceil((i+1)*len/target)`.
pub fn pool_window(i: usize, len: usize, target: usize) -> (usize, usize) {
    let start = i * len / target;
    let end = ((i + 1) * len).div_ceil(target);
    (start, end)
}

fn check_target(target: (usize, usize)) -> Result<()> {
    if target.0 == 0 || target.1 == 0 {
        return Err(Error::shape(format!("pool target must be at least 1x1, got {target:?}")));
    }
    Ok(())
}

pub fn adaptive_avg_pool<T: Scalar>(x: &Tensor<T>, target: (usize, usize)) -> Result<Tensor<T>> {
    check_target(target)?;
    let (n, c, h, w) = x.nchw()?;
    let (th, tw) = target;
    if (th, tw) == (h, w) {
        return Ok(x.clone());
    }
    let mut out = Vec::with_capacity(n * c * th * tw);
    for plane in x.data().chunks(h * w) {
        for i in 0..th {
            let (y0, y1) = pool_window(i, h, th);
            for j in 0..tw {
                let (x0, x1) = pool_window(j, w, tw);
                let mut acc = T::zero();
                for y in y0..y1 {
                    for xx in x0..x1 {
                        acc = acc + plane[y * w + xx];
                    }
                }
                out.push(acc / T::from_usize((y1 - y0) * (x1 - x0)).expect("window size"));
            }
        }
    }
    Tensor::new(&[n, c, th, tw], out)
}

pub fn adaptive_avg_pool_backward<T: Scalar>(
    input_dims: &[usize],
    grad: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, c, th, tw) = grad.nchw()?;
    let (h, w) = (input_dims[2], input_dims[3]);
    if (th, tw) == (h, w) {
        return Ok(grad.clone());
    }
    let mut gx = vec![T::zero(); n * c * h * w];
    for (plane, gplane) in gx.chunks_mut(h * w).zip(grad.data().chunks(th * tw)) {
        for i in 0..th {
            let (y0, y1) = pool_window(i, h, th);
            for j in 0..tw {
                let (x0, x1) = pool_window(j, w, tw);
                let share = gplane[i * tw + j]
                    / T::from_usize((y1 - y0) * (x1 - x0)).expect("window size");
                for y in y0..y1 {
                    for xx in x0..x1 {
                        plane[y * w + xx] = plane[y * w + xx] + share;
                    }
                }
            }
        }
    }
    Tensor::new(input_dims, gx)
}

/// Source taps for one output coordinate of an align-corners=false resize.
#[inline]
fn bilinear_taps<T: Scalar>(o: usize, in_len: usize, out_len: usize) -> (usize, usize, T) {
    let scale = in_len as f64 / out_len as f64;
    let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(in_len - 1);
    let i1 = (i0 + 1).min(in_len - 1);
    (i0, i1, T::from_float(src - i0 as f64))
}

/// Bilinear resize of an NCHW map with half-pixel centres (align corners off).
pub fn upsample_bilinear<T: Scalar>(x: &Tensor<T>, target: (usize, usize)) -> Result<Tensor<T>> {
    check_target(target)?;
    let (n, c, h, w) = x.nchw()?;
    let (th, tw) = target;
    let rows: Vec<_> = (0..th).map(|i| bilinear_taps::<T>(i, h, th)).collect();
    let cols: Vec<_> = (0..tw).map(|j| bilinear_taps::<T>(j, w, tw)).collect();
    let one = T::one();
    let mut out = Vec::with_capacity(n * c * th * tw);
    for plane in x.data().chunks(h * w) {
        for &(y0, y1, ly) in &rows {
            for &(x0, x1, lx) in &cols {
                let top = plane[y0 * w + x0] * (one - lx) + plane[y0 * w + x1] * lx;
                let bottom = plane[y1 * w + x0] * (one - lx) + plane[y1 * w + x1] * lx;
                out.push(top * (one - ly) + bottom * ly);
            }
        }
    }
    Tensor::new(&[n, c, th, tw], out)
}

pub fn upsample_bilinear_backward<T: Scalar>(
    input_dims: &[usize],
    grad: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, c, th, tw) = grad.nchw()?;
    let (h, w) = (input_dims[2], input_dims[3]);
    let rows: Vec<_> = (0..th).map(|i| bilinear_taps::<T>(i, h, th)).collect();
    let cols: Vec<_> = (0..tw).map(|j| bilinear_taps::<T>(j, w, tw)).collect();
    let one = T::one();
    let mut gx = vec![T::zero(); n * c * h * w];
    for (plane, gplane) in gx.chunks_mut(h * w).zip(grad.data().chunks(th * tw)) {
        for (i, &(y0, y1, ly)) in rows.iter().enumerate() {
            for (j, &(x0, x1, lx)) in cols.iter().enumerate() {
                let g = gplane[i * tw + j];
                let mut add = |idx: usize, wgt: T| plane[idx] = plane[idx] + g * wgt;
                add(y0 * w + x0, (one - ly) * (one - lx));
                add(y0 * w + x1, (one - ly) * lx);
                add(y1 * w + x0, ly * (one - lx));
                add(y1 * w + x1, ly * lx);
            }
        }
    }
    Tensor::new(input_dims, gx)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn ones_pool_to_ones() {
        let y = adaptive_avg_pool(&Tensor::<f64>::ones(&[1, 1, 4, 4]), (2, 2)).unwrap();
        assert_eq!(y, Tensor::ones(&[1, 1, 2, 2]));
    }

    #[test]
    fn same_size_is_identity() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 5, 4], |i| i as f64 * 0.5);
        assert_eq!(adaptive_avg_pool(&x, (5, 4)).unwrap(), x);
    }

    #[test]
    fn global_pool_of_ramp_is_mean() {
        let x = Tensor::<f64>::from_fn(&[1, 1, 7, 7], |i| i as f64);
        let y = adaptive_avg_pool(&x, (1, 1)).unwrap();
        let direct: f64 = (0..49).map(|v| v as f64).sum::<f64>() / 49.0;
        assert!((y.data()[0] - direct).abs() < 1e-12);
    }

    #[test]
    fn windows_overlap_when_not_divisible() {
        // 7 -> 3: [0,3), [2,5), [4,7)
        assert_eq!(pool_window(0, 7, 3), (0, 3));
        assert_eq!(pool_window(1, 7, 3), (2, 5));
        assert_eq!(pool_window(2, 7, 3), (4, 7));
    }

    #[test]
    fn zero_target_rejected() {
        assert!(adaptive_avg_pool(&Tensor::<f32>::ones(&[1, 1, 4, 4]), (0, 2)).is_err());
    }

    #[test]
    fn bilinear_constant_stays_constant() {
        let x = Tensor::<f64>::full(&[1, 2, 3, 3], 2.5);
        let y = upsample_bilinear(&x, (7, 11)).unwrap();
        assert!(y.data().iter().all(|&v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn bilinear_doubling_matches_half_pixel_rule() {
        // 1-D ramp [0, 1] upsampled to 4: sources -0.25->0, 0.25, 0.75, 1.25->clamped
        let x = Tensor::<f64>::new(&[1, 1, 1, 2], vec![0.0, 1.0]).unwrap();
        let y = upsample_bilinear(&x, (1, 4)).unwrap();
        assert_eq!(y.data(), &[0.0, 0.25, 0.75, 1.0]);
    }

    proptest! {
        #[test]
        fn divisible_pool_preserves_mean(h in 1usize..6, w in 1usize..6, fh in 1usize..4, fw in 1usize..4) {
            let x = Tensor::<f64>::from_fn(&[1, 2, h * fh, w * fw], |i| ((i * 37) % 11) as f64);
            let y = adaptive_avg_pool(&x, (h, w)).unwrap();
            prop_assert!((x.mean() - y.mean()).abs() < 1e-9);
        }
    }
}
