#![allow(dead_code)]

use mscsa_core::params::ParamStore;
use mscsa_core::{DownsampleStrategy, Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn<T: Scalar>(dims: &[usize], seed: u64) -> Tensor<T> {
    Tensor::randn(dims, 1.0, &mut rng(seed))
}

/// Moves every parameter and buffer to a generic random point so that no
/// branch is trivially zero and norms are not the identity.
pub fn randomize<T: Scalar>(store: &mut ParamStore<T>, seed: u64, scale: f64) {
    let mut r = rng(seed);
    let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
    for name in names {
        let dims = store.get(&name).unwrap().dims().to_vec();
        let numel: usize = dims.iter().product();
        let data: Vec<T> = (0..numel)
            .map(|_| {
                let z: f64 = r.sample(rand_distr::StandardNormal);
                let v = if name.ends_with("running_var") {
                    r.random_range(0.5..1.5)
                } else if name.ends_with("running_mean") {
                    0.1 * z
                } else if is_norm_weight(&name) {
                    1.0 + 0.1 * z
                } else {
                    scale * z
                };
                T::from_float(v)
            })
            .collect();
        store.set(&name, Tensor::new(&dims, data).unwrap()).unwrap();
    }
}

fn is_norm_weight(name: &str) -> bool {
    name.ends_with(".weight") && (name.contains("norm"))
}

pub fn max_abs_diff<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    assert_eq!(a.dims(), b.dims(), "dims differ");
    a.data().iter().zip(b.data()).map(|(x, y)| (x.as_f64() - y.as_f64()).abs()).fold(0.0, f64::max)
}

/// Straight-line loop implementations with a multiply-accumulate counter.
pub struct Oracle<'a, T: Scalar> {
    pub store: &'a ParamStore<T>,
    pub macs: u64,
}

/// `N x C x H x W` map with explicit indexing.
#[derive(Clone, Debug)]
pub struct Map<T> {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Map<T> {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w, data: vec![T::zero(); n * c * h * w] }
    }

    pub fn from_tensor(t: &Tensor<T>) -> Self {
        let (n, c, h, w) = t.nchw().unwrap();
        Self { n, c, h, w, data: t.data().to_vec() }
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new(&[self.n, self.c, self.h, self.w], self.data.clone()).unwrap()
    }

    pub fn idx(&self, b: usize, ch: usize, y: usize, x: usize) -> usize {
        ((b * self.c + ch) * self.h + y) * self.w + x
    }

    pub fn get(&self, b: usize, ch: usize, y: usize, x: usize) -> T {
        self.data[self.idx(b, ch, y, x)]
    }

    pub fn set(&mut self, b: usize, ch: usize, y: usize, x: usize, v: T) {
        let i = self.idx(b, ch, y, x);
        self.data[i] = v;
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { data: self.data.iter().map(|&v| f(v)).collect(), ..self.clone() }
    }

    pub fn channels(&self, start: usize, len: usize) -> Self {
        let mut out = Map::zeros(self.n, len, self.h, self.w);
        for b in 0..self.n {
            for ch in 0..len {
                for y in 0..self.h {
                    for x in 0..self.w {
                        out.set(b, ch, y, x, self.get(b, start + ch, y, x));
                    }
                }
            }
        }
        out
    }

    pub fn concat_channels(parts: &[Map<T>]) -> Self {
        let (n, h, w) = (parts[0].n, parts[0].h, parts[0].w);
        let c = parts.iter().map(|p| p.c).sum();
        let mut out = Map::zeros(n, c, h, w);
        let mut offset = 0;
        for p in parts {
            for b in 0..n {
                for ch in 0..p.c {
                    for y in 0..h {
                        for x in 0..w {
                            out.set(b, offset + ch, y, x, p.get(b, ch, y, x));
                        }
                    }
                }
            }
            offset += p.c;
        }
        out
    }
}

pub fn hardswish<T: Scalar>(x: T) -> T {
    let three = T::from_float(3.0);
    let six = T::from_float(6.0);
    x * (x + three).max(T::zero()).min(six) / six
}

pub fn gelu<T: Scalar>(x: T) -> T {
    T::from_float(0.5) * x * (T::one() + (x / T::from_float(std::f64::consts::SQRT_2)).erf())
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub fn add<T: Scalar>(a: &Map<T>, b: &Map<T>) -> Map<T> {
    Map { data: a.data.iter().zip(&b.data).map(|(&x, &y)| x + y).collect(), ..a.clone() }
}

pub fn mul<T: Scalar>(a: &Map<T>, b: &Map<T>) -> Map<T> {
    Map { data: a.data.iter().zip(&b.data).map(|(&x, &y)| x * y).collect(), ..a.clone() }
}

impl<'a, T: Scalar> Oracle<'a, T> {
    pub fn new(store: &'a ParamStore<T>) -> Self {
        Self { store, macs: 0 }
    }

    fn p(&self, name: &str) -> &[T] {
        self.store.get(name).unwrap_or_else(|_| panic!("missing {name}")).data()
    }

    /// Convolution `{prefix}.weight` (+ `.bias`), zero padding. Every kernel
    /// tap counts as one MAC, padded or not.
    pub fn conv(&mut self, x: &Map<T>, prefix: &str, stride: usize, pad: usize, groups: usize) -> Map<T> {
        let wt = self.store.get(&format!("{prefix}.weight")).unwrap();
        let (oc, icg, k) = (wt.dims()[0], wt.dims()[1], wt.dims()[2]);
        let bias = self.store.get(&format!("{prefix}.bias")).ok().map(|b| b.data().to_vec());
        let oh = (x.h + 2 * pad - k) / stride + 1;
        let ow = (x.w + 2 * pad - k) / stride + 1;
        let ocg = oc / groups;
        let mut out = Map::zeros(x.n, oc, oh, ow);
        for b in 0..x.n {
            for o in 0..oc {
                let g = o / ocg;
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut acc = T::zero();
                        for ic in 0..icg {
                            let cin = g * icg + ic;
                            for ki in 0..k {
                                for kj in 0..k {
                                    self.macs += 1;
                                    let iy = (y * stride + ki) as isize - pad as isize;
                                    let ix = (xx * stride + kj) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                        continue;
                                    }
                                    let wv = wt.data()[((o * icg + ic) * k + ki) * k + kj];
                                    acc = acc + wv * x.get(b, cin, iy as usize, ix as usize);
                                }
                            }
                        }
                        if let Some(bias) = &bias {
                            acc = acc + bias[o];
                        }
                        out.set(b, o, y, xx, acc);
                    }
                }
            }
        }
        out
    }

    pub fn pointwise(&mut self, x: &Map<T>, prefix: &str) -> Map<T> {
        self.conv(x, prefix, 1, 0, 1)
    }

    pub fn depthwise(&mut self, x: &Map<T>, prefix: &str, stride: usize) -> Map<T> {
        self.conv(x, prefix, stride, 1, x.c)
    }

    pub fn batch_norm(&self, x: &Map<T>, prefix: &str) -> Map<T> {
        let g = self.p(&format!("{prefix}.weight"));
        let bt = self.p(&format!("{prefix}.bias"));
        let mean = self.p(&format!("{prefix}.running_mean"));
        let var = self.p(&format!("{prefix}.running_var"));
        let eps = T::from_float(1e-5);
        let mut out = x.clone();
        for b in 0..x.n {
            for ch in 0..x.c {
                for y in 0..x.h {
                    for xx in 0..x.w {
                        let v = (x.get(b, ch, y, xx) - mean[ch]) / (var[ch] + eps).sqrt();
                        out.set(b, ch, y, xx, g[ch] * v + bt[ch]);
                    }
                }
            }
        }
        out
    }

    pub fn ffn_body(&mut self, x: &Map<T>, prefix: &str) -> Map<T> {
        let y = self.pointwise(x, &format!("{prefix}.fc1")).map(gelu);
        let y = self.depthwise(&y, &format!("{prefix}.dw"), 1);
        self.pointwise(&y, &format!("{prefix}.fc2"))
    }

    pub fn ffn(&mut self, x: &Map<T>, prefix: &str) -> Map<T> {
        let xn = self.batch_norm(x, &format!("{prefix}.norm"));
        self.ffn_body(&xn, prefix)
    }

    pub fn intra_ffn(&mut self, x: &Map<T>, prefix: &str, stages: &[usize]) -> Map<T> {
        let xn = self.batch_norm(x, &format!("{prefix}.norm"));
        let mut start = 0;
        let mut outs = Vec::new();
        for (i, &c) in stages.iter().enumerate() {
            let part = xn.channels(start, c);
            outs.push(self.ffn_body(&part, &format!("{prefix}.stage{i}")));
            start += c;
        }
        Map::concat_channels(&outs)
    }

    /// Cross-scale attention branch (no residual).
    pub fn csa(&mut self, x: &Map<T>, prefix: &str, heads: usize, d: usize, strategy: DownsampleStrategy) -> Map<T> {
        let name = |p: &str| format!("{prefix}.{p}");
        let xn = self.batch_norm(x, &name("norm"));
        let q = self.pointwise(&xn, &name("q"));
        let mut scales = vec![xn.clone()];
        match strategy {
            DownsampleStrategy::ParallelDwConv => {
                let x1 = self.depthwise(&xn, &name("down1"), 2);
                scales.push(self.batch_norm(&x1, &name("down1_norm")));
                let x2 = self.depthwise(&xn, &name("down2"), 3);
                scales.push(self.batch_norm(&x2, &name("down2_norm")));
            }
            DownsampleStrategy::CascadeDwConv => {
                let x1 = self.depthwise(&xn, &name("down1"), 2);
                let x1 = self.batch_norm(&x1, &name("down1_norm"));
                let x2 = self.depthwise(&x1, &name("down2"), 2);
                scales.push(x1);
                scales.push(self.batch_norm(&x2, &name("down2_norm")));
            }
            DownsampleStrategy::SingleDwConv => {
                let x1 = self.depthwise(&xn, &name("down1"), 2);
                scales.push(self.batch_norm(&x1, &name("down1_norm")));
            }
            DownsampleStrategy::AvgPool => {
                let s1 = ((xn.h - 1) / 2 + 1, (xn.w - 1) / 2 + 1);
                let s2 = ((xn.h - 1) / 3 + 1, (xn.w - 1) / 3 + 1);
                scales.push(adaptive_avg_pool(&xn, s1));
                scales.push(adaptive_avg_pool(&xn, s2));
            }
        }
        let keys: Vec<Map<T>> =
            scales.iter().enumerate().map(|(i, s)| self.pointwise(s, &name(&format!("k{i}")))).collect();
        let values: Vec<Map<T>> =
            scales.iter().enumerate().map(|(i, s)| self.pointwise(s, &name(&format!("v{i}")))).collect();

        let (n, h, w) = (x.n, x.h, x.w);
        let dv = 2 * d;
        let scale = T::one() / T::from_float(d as f64).sqrt();
        let mut attended = Map::zeros(n, heads * dv, h, w);
        for b in 0..n {
            for hd in 0..heads {
                for py in 0..h {
                    for px in 0..w {
                        // (key scale, y, x) for every concatenated token, scale 0 first
                        let mut tokens = Vec::new();
                        for (si, k) in keys.iter().enumerate() {
                            for ty in 0..k.h {
                                for tx in 0..k.w {
                                    tokens.push((si, ty, tx));
                                }
                            }
                        }
                        let mut scores = Vec::with_capacity(tokens.len());
                        for &(si, ty, tx) in &tokens {
                            let mut dot = T::zero();
                            for e in 0..d {
                                self.macs += 1;
                                dot = dot + q.get(b, hd * d + e, py, px) * keys[si].get(b, hd * d + e, ty, tx);
                            }
                            scores.push(dot * scale);
                        }
                        let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
                        let exps: Vec<T> = scores.iter().map(|&s| (s - max).exp()).collect();
                        let total = exps.iter().copied().fold(T::zero(), |a, b| a + b);
                        for e in 0..dv {
                            let mut acc = T::zero();
                            for (t, &(si, ty, tx)) in tokens.iter().enumerate() {
                                self.macs += 1;
                                acc = acc + exps[t] / total * values[si].get(b, hd * dv + e, ty, tx);
                            }
                            attended.set(b, hd * dv + e, py, px, acc);
                        }
                    }
                }
            }
        }
        let pcp_in = values[0].map(hardswish);
        let pcp = self.depthwise(&pcp_in, &name("pcp"), 1);
        let mixed = add(&attended, &pcp).map(hardswish);
        self.pointwise(&mixed, &name("proj"))
    }

    /// Per-stage `proj(stage) * sigmoid(weight_gen(up)) + bias_gen(up)`.
    pub fn dense_fuse(&mut self, x: &Map<T>, stages: &[Map<T>], split: &[usize]) -> Vec<Map<T>> {
        let mut start = 0;
        let mut out = Vec::new();
        for (i, (stage, &c)) in stages.iter().zip(split).enumerate() {
            let chunk = x.channels(start, c);
            start += c;
            let up = upsample_bilinear(&chunk, (stage.h, stage.w));
            let gate = self.pointwise(&up, &format!("fuse{i}.weight_gen")).map(sigmoid);
            let bias = self.pointwise(&up, &format!("fuse{i}.bias_gen"));
            let proj = self.pointwise(stage, &format!("fuse{i}.proj"));
            out.push(add(&mul(&proj, &gate), &bias));
        }
        out
    }
}

pub fn adaptive_avg_pool<T: Scalar>(x: &Map<T>, (th, tw): (usize, usize)) -> Map<T> {
    let mut out = Map::zeros(x.n, x.c, th, tw);
    for b in 0..x.n {
        for ch in 0..x.c {
            for i in 0..th {
                let (y0, y1) = (i * x.h / th, ((i + 1) * x.h).div_ceil(th));
                for j in 0..tw {
                    let (x0, x1) = (j * x.w / tw, ((j + 1) * x.w).div_ceil(tw));
                    let mut acc = T::zero();
                    for y in y0..y1 {
                        for xx in x0..x1 {
                            acc = acc + x.get(b, ch, y, xx);
                        }
                    }
                    out.set(b, ch, i, j, acc / T::from_float(((y1 - y0) * (x1 - x0)) as f64));
                }
            }
        }
    }
    out
}

/// Half-pixel-centre bilinear resize; sources left of the first pixel are
/// clamped to it.
pub fn upsample_bilinear<T: Scalar>(x: &Map<T>, (th, tw): (usize, usize)) -> Map<T> {
    let tap = |o: usize, len: usize, target: usize| {
        let src = ((o as f64 + 0.5) * len as f64 / target as f64 - 0.5).max(0.0);
        let lo = (src.floor() as usize).min(len - 1);
        let hi = (lo + 1).min(len - 1);
        (lo, hi, src - lo as f64)
    };
    let mut out = Map::zeros(x.n, x.c, th, tw);
    for b in 0..x.n {
        for ch in 0..x.c {
            for i in 0..th {
                let (y0, y1, ly) = tap(i, x.h, th);
                for j in 0..tw {
                    let (x0, x1, lx) = tap(j, x.w, tw);
                    let v = x.get(b, ch, y0, x0).as_f64() * (1.0 - ly) * (1.0 - lx)
                        + x.get(b, ch, y0, x1).as_f64() * (1.0 - ly) * lx
                        + x.get(b, ch, y1, x0).as_f64() * ly * (1.0 - lx)
                        + x.get(b, ch, y1, x1).as_f64() * ly * lx;
                    out.set(b, ch, i, j, T::from_float(v));
                }
            }
        }
    }
    out
}
