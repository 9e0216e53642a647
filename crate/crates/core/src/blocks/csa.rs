use super::DownsampleStrategy;
use crate::analysis::LayerSpec;
use crate::autodiff::{Session, Var};
use crate::error::{Error, Result};
use crate::params::{ParamInit, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::ConvSpec;

/// Smallest spatial extent for which all three key/value scales are
/// non-degenerate.
pub const MIN_SPATIAL: usize = 3;

/// Extent after a 3x3, padding-1 depthwise conv with the given stride:
/// `floor((len - 1) / stride) + 1`.
pub fn downsampled_size(len: usize, stride: usize) -> usize {
    (len - 1) / stride + 1
}

/// Spatial sizes of every key/value scale, full resolution first.
fn scale_sizes(h: usize, w: usize, strategy: DownsampleStrategy) -> Vec<(usize, usize)> {
    let s1 = (downsampled_size(h, 2), downsampled_size(w, 2));
    match strategy {
        DownsampleStrategy::ParallelDwConv | DownsampleStrategy::AvgPool => {
            vec![(h, w), s1, (downsampled_size(h, 3), downsampled_size(w, 3))]
        }
        DownsampleStrategy::CascadeDwConv => {
            vec![(h, w), s1, (downsampled_size(s1.0, 2), downsampled_size(s1.1, 2))]
        }
        DownsampleStrategy::SingleDwConv => vec![(h, w), s1],
    }
}

/// Concatenated key/value token count for an `h x w` query map.
pub fn kv_token_count(h: usize, w: usize, strategy: DownsampleStrategy) -> usize {
    scale_sizes(h, w, strategy).iter().map(|(a, b)| a * b).sum()
}

/// Cross-scale attention: queries from the full-resolution map attend over
/// keys and values gathered from several downsampled scales, with a
/// depthwise-conv path on the full-resolution values added to the output.
///
/// Query/key heads have width `head_dim`; value heads have `2 * head_dim`.
#[derive(Debug, Clone)]
pub struct CrossScaleAttention {
    prefix: String,
    channels: usize,
    heads: usize,
    head_dim: usize,
    strategy: DownsampleStrategy,
}

/// Intermediate nodes of one attention forward, for inspection in tests.
#[derive(Debug, Clone, Copy)]
pub struct CsaTrace {
    pub output: Var,
    /// Row-stochastic attention weights, `(N * heads) x hw x tokens`.
    pub attention: Var,
    /// Full-resolution values `V0`, `N x (heads * 2d) x h x w`.
    pub values0: Var,
    pub tokens: usize,
}

impl CrossScaleAttention {
    pub fn new(
        prefix: impl Into<String>,
        channels: usize,
        heads: usize,
        head_dim: usize,
        strategy: DownsampleStrategy,
    ) -> Self {
        Self { prefix: prefix.into(), channels, heads, head_dim, strategy }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn strategy(&self) -> DownsampleStrategy {
        self.strategy
    }

    pub fn key_dim(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn value_dim(&self) -> usize {
        2 * self.heads * self.head_dim
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    /// Name of the output projection, the last op of the branch.
    pub fn output_projection(&self) -> String {
        self.name("proj")
    }

    pub fn layer_spec(&self) -> LayerSpec {
        LayerSpec::Csa {
            channels: self.channels,
            heads: self.heads,
            head_dim: self.head_dim,
            strategy: self.strategy,
        }
    }

    pub fn register<T: Scalar>(&self, store: &mut ParamStore<T>, init: &mut ParamInit) -> Result<()> {
        if self.heads == 0 || self.head_dim == 0 {
            return Err(Error::config("attention needs at least one head of positive width"));
        }
        let c = self.channels;
        store.add_batch_norm(&self.name("norm"), c)?;
        store.add_conv(init, &self.name("q"), self.key_dim(), c, 1, true)?;
        match self.strategy {
            DownsampleStrategy::AvgPool => {}
            DownsampleStrategy::SingleDwConv => {
                store.add_conv(init, &self.name("down1"), c, 1, 3, false)?;
                store.add_batch_norm(&self.name("down1_norm"), c)?;
            }
            DownsampleStrategy::ParallelDwConv | DownsampleStrategy::CascadeDwConv => {
                for i in 1..=2 {
                    store.add_conv(init, &self.name(&format!("down{i}")), c, 1, 3, false)?;
                    store.add_batch_norm(&self.name(&format!("down{i}_norm")), c)?;
                }
            }
        }
        for i in 0..self.strategy.num_scales() {
            store.add_conv(init, &self.name(&format!("k{i}")), self.key_dim(), c, 1, true)?;
            store.add_conv(init, &self.name(&format!("v{i}")), self.value_dim(), c, 1, true)?;
        }
        store.add_conv(init, &self.name("pcp"), self.value_dim(), 1, 3, true)?;
        store.add_conv(init, &self.name("proj"), c, self.value_dim(), 1, true)?;
        Ok(())
    }

    /// Pre-norm followed by the attention branch; returns the branch output.
    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        Ok(self.forward_traced(s, x)?.output)
    }

    pub fn forward_traced<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<CsaTrace> {
        let (n, c, h, w) = s.tape.value(x).nchw()?;
        if c != self.channels {
            return Err(Error::shape(format!("{}: expected {} channels, got {c}", self.prefix, self.channels)));
        }
        if h < MIN_SPATIAL || w < MIN_SPATIAL {
            return Err(Error::config(format!(
                "{}: spatial size {h}x{w} is below the {MIN_SPATIAL}x{MIN_SPATIAL} minimum for three key/value scales",
                self.prefix
            )));
        }
        let (heads, d) = (self.heads, self.head_dim);
        let xn = s.batch_norm(x, &self.name("norm"))?;
        let q = s.conv(xn, &self.name("q"), ConvSpec::pointwise())?;

        let sizes = scale_sizes(h, w, self.strategy);
        let scales = self.downsample(s, xn, &sizes)?;

        let mut keys = Vec::with_capacity(scales.len());
        let mut values = Vec::with_capacity(scales.len());
        let mut values0 = None;
        for (i, (&xi, &(hi, wi))) in scales.iter().zip(&sizes).enumerate() {
            let k = s.conv(xi, &self.name(&format!("k{i}")), ConvSpec::pointwise())?;
            let v = s.conv(xi, &self.name(&format!("v{i}")), ConvSpec::pointwise())?;
            values0.get_or_insert(v);
            keys.push(s.tape.reshape(k, &[n, heads, d, hi * wi])?);
            values.push(s.tape.reshape(v, &[n, heads, 2 * d, hi * wi])?);
        }
        let tokens: usize = sizes.iter().map(|(a, b)| a * b).sum();
        let values0 = values0.expect("at least one scale");

        let k = s.tape.concat(&keys, 3)?;
        let k = s.tape.reshape(k, &[n * heads, d, tokens])?;
        let v = s.tape.concat(&values, 3)?;
        let v = s.tape.reshape(v, &[n * heads, 2 * d, tokens])?;
        let v_t = s.tape.transpose_last2(v)?;
        let q = s.tape.reshape(q, &[n * heads, d, h * w])?;
        let q_t = s.tape.transpose_last2(q)?;

        let scores = s.tape.bmm(q_t, k)?;
        let scores = s.tape.scale(scores, T::from_float(1.0 / (d as f64).sqrt()));
        let attention = s.tape.softmax(scores)?;
        let attended = s.tape.bmm(attention, v_t)?;
        let attended = s.tape.transpose_last2(attended)?;
        let attended = s.tape.reshape(attended, &[n, heads * 2 * d, h, w])?;

        let pcp = self.conv_path(s, values0)?;
        let mixed = s.tape.add(attended, pcp)?;
        let mixed = s.tape.hardswish(mixed);
        let output = s.conv(mixed, &self.name("proj"), ConvSpec::pointwise())?;
        Ok(CsaTrace { output, attention, values0, tokens })
    }

    /// Parallel convolution path: 3x3 depthwise conv of `hardswish(V0)`.
    pub fn conv_path<T: Scalar>(&self, s: &mut Session<'_, T>, values0: Var) -> Result<Var> {
        let x = s.tape.hardswish(values0);
        s.conv(x, &self.name("pcp"), ConvSpec::depthwise(self.value_dim(), 3, 1, 1))
    }

    fn downsample<T: Scalar>(
        &self,
        s: &mut Session<'_, T>,
        xn: Var,
        sizes: &[(usize, usize)],
    ) -> Result<Vec<Var>> {
        let c = self.channels;
        let dw = |s: &mut Session<'_, T>, input: Var, idx: usize, stride: usize| -> Result<Var> {
            let y = s.conv(input, &self.name(&format!("down{idx}")), ConvSpec::depthwise(c, 3, stride, 1))?;
            s.batch_norm(y, &self.name(&format!("down{idx}_norm")))
        };
        Ok(match self.strategy {
            DownsampleStrategy::ParallelDwConv => {
                let x1 = dw(s, xn, 1, 2)?;
                let x2 = dw(s, xn, 2, 3)?;
                vec![xn, x1, x2]
            }
            DownsampleStrategy::CascadeDwConv => {
                let x1 = dw(s, xn, 1, 2)?;
                let x2 = dw(s, x1, 2, 2)?;
                vec![xn, x1, x2]
            }
            DownsampleStrategy::SingleDwConv => vec![xn, dw(s, xn, 1, 2)?],
            DownsampleStrategy::AvgPool => {
                let x1 = s.tape.adaptive_avg_pool(xn, sizes[1])?;
                let x2 = s.tape.adaptive_avg_pool(xn, sizes[2])?;
                vec![xn, x1, x2]
            }
        })
    }
}
