use super::config::{MscsaConfig, Variant};
use super::pyramid::StagePyramid;
use crate::autodiff::{Session, Var};
use crate::blocks::{CrossScaleAttention, FeedForward, IntraFeedForward};
use crate::error::{Error, Result};
use crate::params::{ParamInit, ParamStore, INIT_STD};
use crate::scalar::Scalar;
use crate::tensor::{ConvSpec, Tensor};

/// One block: CSA, Intra-FFN, CSA, FFN, each a pre-norm residual branch.
#[derive(Debug, Clone)]
pub struct MscsaBlock {
    pub csa1: CrossScaleAttention,
    pub intra_ffn: IntraFeedForward,
    pub csa2: CrossScaleAttention,
    pub ffn: FeedForward,
}

impl MscsaBlock {
    fn new(index: usize, cfg: &MscsaConfig, stage_channels: &[usize]) -> Result<Self> {
        let c: usize = stage_channels.iter().sum();
        let p = format!("block{index}");
        Ok(Self {
            csa1: CrossScaleAttention::new(format!("{p}.csa1"), c, cfg.heads, cfg.head_dim, cfg.strategy),
            intra_ffn: IntraFeedForward::new(format!("{p}.intra_ffn"), stage_channels, cfg.mlp_ratio)?,
            csa2: CrossScaleAttention::new(format!("{p}.csa2"), c, cfg.heads, cfg.head_dim, cfg.strategy),
            ffn: FeedForward::new(format!("{p}.ffn"), c, cfg.mlp_ratio)?,
        })
    }

    fn register<T: Scalar>(&self, store: &mut ParamStore<T>, init: &mut ParamInit) -> Result<()> {
        self.csa1.register(store, init)?;
        self.intra_ffn.register(store, init)?;
        self.csa2.register(store, init)?;
        self.ffn.register(store, init)
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let branch = self.csa1.forward(s, x)?;
        let x = s.tape.add(x, branch)?;
        let branch = self.intra_ffn.forward(s, x)?;
        let x = s.tape.add(x, branch)?;
        let branch = self.csa2.forward(s, x)?;
        let x = s.tape.add(x, branch)?;
        let branch = self.ffn.forward(s, x)?;
        s.tape.add(x, branch)
    }

    /// Final projection of every residual branch.
    pub fn branch_outputs(&self) -> Vec<String> {
        let mut names = vec![self.csa1.output_projection()];
        names.extend(self.intra_ffn.output_projections());
        names.push(self.csa2.output_projection());
        names.push(self.ffn.output_projection());
        names
    }
}

#[derive(Debug, Clone)]
pub enum ModelOutput {
    /// `N x num_classes`.
    Logits(Var),
    /// One `N x fusion_channels x H_i x W_i` map per stage.
    Pyramid(Vec<Var>),
}

/// Layer layout derived from an [`MscsaConfig`]. Parameters live in a
/// separate [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Model {
    cfg: MscsaConfig,
    squeezed: Vec<usize>,
    blocks: Vec<MscsaBlock>,
}

impl Model {
    pub fn new(cfg: &MscsaConfig) -> Result<Self> {
        cfg.validate()?;
        let squeezed = cfg.squeezed_channels()?;
        let blocks = (0..cfg.depth)
            .map(|i| MscsaBlock::new(i, cfg, &squeezed))
            .collect::<Result<_>>()?;
        Ok(Self { cfg: cfg.clone(), squeezed, blocks })
    }

    /// Layout plus freshly initialized parameters seeded by `cfg.seed`.
    pub fn build<T: Scalar>(cfg: &MscsaConfig) -> Result<(Self, ParamStore<T>)> {
        let model = Self::new(cfg)?;
        let store = model.init_params(cfg.seed)?;
        Ok((model, store))
    }

    pub fn config(&self) -> &MscsaConfig {
        &self.cfg
    }

    pub fn blocks(&self) -> &[MscsaBlock] {
        &self.blocks
    }

    pub fn squeezed_channels(&self) -> &[usize] {
        &self.squeezed
    }

    pub fn channels(&self) -> usize {
        self.squeezed.iter().sum()
    }

    pub fn init_params<T: Scalar>(&self, seed: u64) -> Result<ParamStore<T>> {
        let mut store = ParamStore::new();
        let mut init = ParamInit::new(seed);
        if self.cfg.squeeze_ratio.is_some() {
            for (i, (&c, &sq)) in self.cfg.profile.channels.iter().zip(&self.squeezed).enumerate() {
                store.add_conv(&mut init, &format!("squeeze{i}"), sq, c, 1, true)?;
            }
        }
        for block in &self.blocks {
            block.register(&mut store, &mut init)?;
        }
        match self.cfg.variant {
            Variant::Classification => {
                let c = self.channels();
                let k = self.cfg.num_classes;
                store.insert("head.weight", init.trunc_normal(&[c, k], INIT_STD), true)?;
                store.insert("head.bias", Tensor::zeros(&[k]), true)?;
            }
            Variant::Dense => {
                let fusion = self.cfg.fusion_channels_per_stage()?;
                for (i, ((&c, &sq), &f)) in
                    self.cfg.profile.channels.iter().zip(&self.squeezed).zip(&fusion).enumerate()
                {
                    store.add_conv(&mut init, &format!("fuse{i}.weight_gen"), f, sq, 1, true)?;
                    store.add_conv(&mut init, &format!("fuse{i}.bias_gen"), f, sq, 1, true)?;
                    store.add_conv(&mut init, &format!("fuse{i}.proj"), f, c, 1, true)?;
                }
            }
        }
        Ok(store)
    }

    /// Names of every branch-final projection across the stack.
    pub fn branch_output_projections(&self) -> Vec<String> {
        self.blocks.iter().flat_map(MscsaBlock::branch_outputs).collect()
    }

    /// Zeroes weights and biases of every branch-final projection, making
    /// the block stack an identity map.
    pub fn zero_branch_outputs<T: Scalar>(&self, store: &mut ParamStore<T>) -> Result<()> {
        for prefix in self.branch_output_projections() {
            for part in ["weight", "bias"] {
                let name = format!("{prefix}.{part}");
                let dims = store.get(&name)?.dims().to_vec();
                store.set(&name, Tensor::zeros(&dims))?;
            }
        }
        Ok(())
    }

    /// Pools every stage to the common size, optionally squeezes channels,
    /// and concatenates along channels in stage order.
    pub fn aggregate<T: Scalar>(&self, s: &mut Session<'_, T>, stages: &[Var]) -> Result<Var> {
        if stages.len() != self.squeezed.len() {
            return Err(Error::shape(format!(
                "model has {} stages, pyramid has {}",
                self.squeezed.len(),
                stages.len()
            )));
        }
        let target = self.cfg.pooled_size();
        let mut parts = Vec::with_capacity(stages.len());
        for (i, (&stage, &c)) in stages.iter().zip(&self.cfg.profile.channels).enumerate() {
            let got = s.tape.value(stage).nchw()?.1;
            if got != c {
                return Err(Error::shape(format!("stage {i} has {got} channels, profile says {c}")));
            }
            let pooled = s.tape.adaptive_avg_pool(stage, (target, target))?;
            parts.push(if self.cfg.squeeze_ratio.is_some() {
                s.conv(pooled, &format!("squeeze{i}"), ConvSpec::pointwise())?
            } else {
                pooled
            });
        }
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        s.tape.concat(&parts, 1)
    }

    /// Runs every block; `x` keeps its shape.
    pub fn stack<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        self.blocks.iter().try_fold(x, |x, block| block.forward(s, x))
    }

    /// Global average pool followed by an affine map to class logits.
    pub fn classify<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let (n, c, _, _) = s.tape.value(x).nchw()?;
        let pooled = s.tape.adaptive_avg_pool(x, (1, 1))?;
        let flat = s.tape.reshape(pooled, &[n, c])?;
        let w = s.param("head.weight")?;
        let b = s.param("head.bias")?;
        let logits = s.tape.matmul(flat, w)?;
        s.tape.add_bias(logits, b)
    }

    /// Splits the block output per stage, upsamples each chunk to its
    /// stage's resolution, and injects it into the projected backbone
    /// feature as `proj(stage) * sigmoid(weight_gen(up)) + bias_gen(up)`.
    pub fn dense_fuse<T: Scalar>(
        &self,
        s: &mut Session<'_, T>,
        x: Var,
        stages: &[Var],
    ) -> Result<Vec<Var>> {
        let chunks = s.tape.split(x, 1, &self.squeezed)?;
        let mut fused = Vec::with_capacity(stages.len());
        for (i, (&chunk, &stage)) in chunks.iter().zip(stages).enumerate() {
            let (_, _, h, w) = s.tape.value(stage).nchw()?;
            let up = s.tape.upsample_bilinear(chunk, (h, w))?;
            let up_dims = s.tape.dims(up);
            assert_eq!((up_dims[2], up_dims[3]), (h, w), "upsampled chunk must match stage {i}");
            let gate = s.conv(up, &format!("fuse{i}.weight_gen"), ConvSpec::pointwise())?;
            let gate = s.tape.sigmoid(gate);
            let bias = s.conv(up, &format!("fuse{i}.bias_gen"), ConvSpec::pointwise())?;
            let proj = s.conv(stage, &format!("fuse{i}.proj"), ConvSpec::pointwise())?;
            let gated = s.tape.mul(proj, gate)?;
            fused.push(s.tape.add(gated, bias)?);
        }
        Ok(fused)
    }

    /// Binds the pyramid as constants and runs the configured variant.
    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, pyramid: &StagePyramid<T>) -> Result<ModelOutput> {
        let stages: Vec<Var> =
            pyramid.stages().iter().map(|st| s.input(st.features.clone())).collect();
        self.forward_vars(s, &stages)
    }

    /// Like [`Model::forward`] with stage features already on the tape.
    pub fn forward_vars<T: Scalar>(&self, s: &mut Session<'_, T>, stages: &[Var]) -> Result<ModelOutput> {
        let x = self.aggregate(s, stages)?;
        let x = self.stack(s, x)?;
        Ok(match self.cfg.variant {
            Variant::Classification => ModelOutput::Logits(self.classify(s, x)?),
            Variant::Dense => ModelOutput::Pyramid(self.dense_fuse(s, x, stages)?),
        })
    }
}
