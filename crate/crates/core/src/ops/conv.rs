use rayon::prelude::*;

use super::linalg::gemm_acc;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{ConvSpec, Tensor};

/// Validated geometry of one convolution call.
#[derive(Debug, Clone, Copy)]
struct Geometry {
    n: usize,
    in_c: usize,
    h: usize,
    w: usize,
    out_c: usize,
    oh: usize,
    ow: usize,
    in_per_group: usize,
    out_per_group: usize,
    spec: ConvSpec,
}

impl Geometry {
    fn new<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, spec: ConvSpec) -> Result<Self> {
        let (n, in_c, h, w) = x.nchw()?;
        let (out_c, wic, kh, kw) = weight.nchw()?;
        if spec.groups == 0 || in_c % spec.groups != 0 || out_c % spec.groups != 0 {
            return Err(Error::config(format!(
                "groups {} must divide in-channels {in_c} and out-channels {out_c}",
                spec.groups
            )));
        }
        if wic != in_c / spec.groups || (kh, kw) != spec.kernel {
            return Err(Error::shape(format!(
                "weight {:?} does not fit input {:?} with {spec:?}",
                weight.dims(),
                x.dims()
            )));
        }
        let (oh, ow) = spec.output_size(h, w)?;
        Ok(Self {
            n,
            in_c,
            h,
            w,
            out_c,
            oh,
            ow,
            in_per_group: in_c / spec.groups,
            out_per_group: out_c / spec.groups,
            spec,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.spec == ConvSpec::pointwise()
    }

    /// Input coordinate hit by output `o` and kernel tap `k` along one axis.
    #[inline]
    fn source(o: usize, k: usize, stride: usize, pad: usize, len: usize) -> Option<usize> {
        let pos = (o * stride + k) as isize - pad as isize;
        (pos >= 0 && (pos as usize) < len).then_some(pos as usize)
    }
}

/// Zero-padded 2-D cross-correlation over an NCHW input.
///
/// `weight` is `out_c x (in_c / groups) x kh x kw`. Each output element is
/// accumulated over `(input channel, kernel row, kernel column)` in that
/// order, then the bias is added.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: ConvSpec,
) -> Result<Tensor<T>> {
    let g = Geometry::new(x, weight, spec)?;
    if let Some(b) = bias {
        if b.dims() != [g.out_c] {
            return Err(Error::shape(format!("bias {:?} for {} out-channels", b.dims(), g.out_c)));
        }
    }
    let (hw, ohw) = (g.h * g.w, g.oh * g.ow);
    let mut out = vec![T::zero(); g.n * g.out_c * ohw];
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let wdata = weight.data();

    out.par_chunks_mut(g.out_c * ohw).enumerate().for_each(|(b, sample)| {
        let xs = &x.data()[b * g.in_c * hw..(b + 1) * g.in_c * hw];
        if g.is_pointwise() {
            gemm_acc(wdata, xs, sample, g.out_c, g.in_c, hw);
        } else {
            for (oc, plane) in sample.chunks_mut(ohw).enumerate() {
                let group = oc / g.out_per_group;
                for icl in 0..g.in_per_group {
                    let ic = group * g.in_per_group + icl;
                    let xp = &xs[ic * hw..(ic + 1) * hw];
                    for ki in 0..kh {
                        for kj in 0..kw {
                            let wv = wdata[((oc * g.in_per_group + icl) * kh + ki) * kw + kj];
                            for oy in 0..g.oh {
                                let Some(iy) = Geometry::source(oy, ki, sh, ph, g.h) else {
                                    continue;
                                };
                                for ox in 0..g.ow {
                                    if let Some(ix) = Geometry::source(ox, kj, sw, pw, g.w) {
                                        let o = &mut plane[oy * g.ow + ox];
                                        *o = *o + wv * xp[iy * g.w + ix];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        if let Some(bias) = bias {
            for (plane, &bv) in sample.chunks_mut(ohw).zip(bias.data()) {
                plane.iter_mut().for_each(|o| *o = *o + bv);
            }
        }
    });
    Tensor::new(&[g.n, g.out_c, g.oh, g.ow], out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    spec: ConvSpec,
    grad: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let g = Geometry::new(x, weight, spec)?;
    if grad.dims() != [g.n, g.out_c, g.oh, g.ow] {
        return Err(Error::shape(format!(
            "conv output gradient {:?} does not match output [{}, {}, {}, {}]",
            grad.dims(),
            g.n,
            g.out_c,
            g.oh,
            g.ow
        )));
    }
    let (hw, ohw) = (g.h * g.w, g.oh * g.ow);
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let wdata = weight.data();
    let gdata = grad.data();
    let taps = kh * kw;

    // Input gradient: samples are independent.
    let mut gx = vec![T::zero(); x.numel()];
    gx.par_chunks_mut(g.in_c * hw).enumerate().for_each(|(b, gxs)| {
        let gs = &gdata[b * g.out_c * ohw..(b + 1) * g.out_c * ohw];
        if g.is_pointwise() {
            let mut wt = vec![T::zero(); wdata.len()];
            for oc in 0..g.out_c {
                for ic in 0..g.in_c {
                    wt[ic * g.out_c + oc] = wdata[oc * g.in_c + ic];
                }
            }
            gemm_acc(&wt, gs, gxs, g.in_c, g.out_c, hw);
            return;
        }
        for oc in 0..g.out_c {
            let group = oc / g.out_per_group;
            let gp = &gs[oc * ohw..(oc + 1) * ohw];
            for icl in 0..g.in_per_group {
                let ic = group * g.in_per_group + icl;
                let gxp = &mut gxs[ic * hw..(ic + 1) * hw];
                for ki in 0..kh {
                    for kj in 0..kw {
                        let wv = wdata[((oc * g.in_per_group + icl) * kh + ki) * kw + kj];
                        for oy in 0..g.oh {
                            let Some(iy) = Geometry::source(oy, ki, sh, ph, g.h) else {
                                continue;
                            };
                            for ox in 0..g.ow {
                                if let Some(ix) = Geometry::source(ox, kj, sw, pw, g.w) {
                                    let t = &mut gxp[iy * g.w + ix];
                                    *t = *t + wv * gp[oy * g.ow + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    });

    // Weight gradient: output channels are independent; samples are
    // reduced in index order inside each channel.
    let mut gw = vec![T::zero(); weight.numel()];
    gw.par_chunks_mut(g.in_per_group * taps).enumerate().for_each(|(oc, gwo)| {
        let group = oc / g.out_per_group;
        for b in 0..g.n {
            let gp = &gdata[(b * g.out_c + oc) * ohw..(b * g.out_c + oc + 1) * ohw];
            for icl in 0..g.in_per_group {
                let ic = group * g.in_per_group + icl;
                let xp = &x.data()[(b * g.in_c + ic) * hw..(b * g.in_c + ic + 1) * hw];
                for ki in 0..kh {
                    for kj in 0..kw {
                        let mut acc = T::zero();
                        for oy in 0..g.oh {
                            let Some(iy) = Geometry::source(oy, ki, sh, ph, g.h) else {
                                continue;
                            };
                            for ox in 0..g.ow {
                                if let Some(ix) = Geometry::source(ox, kj, sw, pw, g.w) {
                                    acc = acc + gp[oy * g.ow + ox] * xp[iy * g.w + ix];
                                }
                            }
                        }
                        let t = &mut gwo[(icl * kh + ki) * kw + kj];
                        *t = *t + acc;
                    }
                }
            }
        }
    });

    let mut gb = vec![T::zero(); g.out_c];
    for b in 0..g.n {
        for (oc, acc) in gb.iter_mut().enumerate() {
            let gp = &gdata[(b * g.out_c + oc) * ohw..(b * g.out_c + oc + 1) * ohw];
            *acc = *acc + gp.iter().fold(T::zero(), |s, &v| s + v);
        }
    }

    Ok(ConvGrads {
        input: Tensor::new(x.dims(), gx)?,
        weight: Tensor::new(weight.dims(), gw)?,
        bias: Tensor::new(&[g.out_c], gb)?,
    })
}
