use crate::analysis::LayerSpec;
use crate::autodiff::{Session, Var};
use crate::error::{Error, Result};
use crate::params::{ParamInit, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::ConvSpec;

/// Hidden width `ratio * channels`; rejects ratios that do not give an
/// integer width.
pub fn expand_channels(channels: usize, ratio: f64) -> Result<usize> {
    let hidden = ratio * channels as f64;
    let rounded = hidden.round();
    if ratio <= 0.0 || (hidden - rounded).abs() > 1e-9 || rounded < 1.0 {
        return Err(Error::config(format!(
            "MLP ratio {ratio} on {channels} channels does not give an integer hidden width"
        )));
    }
    Ok(rounded as usize)
}

/// Pointwise expand, GELU, 3x3 depthwise conv, pointwise project.
#[derive(Debug, Clone)]
pub struct FeedForward {
    prefix: String,
    channels: usize,
    hidden: usize,
    /// Whether this layer applies its own pre-norm.
    owns_norm: bool,
}

impl FeedForward {
    pub fn new(prefix: impl Into<String>, channels: usize, ratio: f64) -> Result<Self> {
        Ok(Self {
            prefix: prefix.into(),
            channels,
            hidden: expand_channels(channels, ratio)?,
            owns_norm: true,
        })
    }

    /// An FFN without its own norm, for use inside [`IntraFeedForward`].
    fn inner(prefix: String, channels: usize, ratio: f64) -> Result<Self> {
        Ok(Self { owns_norm: false, ..Self::new(prefix, channels, ratio)? })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    pub fn output_projection(&self) -> String {
        self.name("fc2")
    }

    pub fn layer_spec(&self) -> LayerSpec {
        LayerSpec::Ffn { channels: self.channels, hidden: self.hidden }
    }

    pub fn register<T: Scalar>(&self, store: &mut ParamStore<T>, init: &mut ParamInit) -> Result<()> {
        if self.owns_norm {
            store.add_batch_norm(&self.name("norm"), self.channels)?;
        }
        store.add_conv(init, &self.name("fc1"), self.hidden, self.channels, 1, true)?;
        store.add_conv(init, &self.name("dw"), self.hidden, 1, 3, true)?;
        store.add_conv(init, &self.name("fc2"), self.channels, self.hidden, 1, true)?;
        Ok(())
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let (_, c, _, _) = s.tape.value(x).nchw()?;
        if c != self.channels {
            return Err(Error::shape(format!("{}: expected {} channels, got {c}", self.prefix, self.channels)));
        }
        let x = if self.owns_norm { s.batch_norm(x, &self.name("norm"))? } else { x };
        let y = s.conv(x, &self.name("fc1"), ConvSpec::pointwise())?;
        let y = s.tape.gelu(y);
        let y = s.conv(y, &self.name("dw"), ConvSpec::depthwise(self.hidden, 3, 1, 1))?;
        s.conv(y, &self.name("fc2"), ConvSpec::pointwise())
    }
}

/// One FFN per backbone stage, each applied to that stage's channel slice
/// of the multi-stage map. Equivalent to an FFN whose projections are
/// block-diagonal over the stages.
#[derive(Debug, Clone)]
pub struct IntraFeedForward {
    prefix: String,
    stage_channels: Vec<usize>,
    stages: Vec<FeedForward>,
}

impl IntraFeedForward {
    pub fn new(prefix: impl Into<String>, stage_channels: &[usize], ratio: f64) -> Result<Self> {
        let prefix = prefix.into();
        if stage_channels.is_empty() {
            return Err(Error::config("Intra-FFN needs at least one stage"));
        }
        let stages = stage_channels
            .iter()
            .enumerate()
            .map(|(i, &c)| FeedForward::inner(format!("{prefix}.stage{i}"), c, ratio))
            .collect::<Result<_>>()?;
        Ok(Self { prefix, stage_channels: stage_channels.to_vec(), stages })
    }

    pub fn channels(&self) -> usize {
        self.stage_channels.iter().sum()
    }

    pub fn stage_channels(&self) -> &[usize] {
        &self.stage_channels
    }

    pub fn stages(&self) -> &[FeedForward] {
        &self.stages
    }

    pub fn output_projections(&self) -> Vec<String> {
        self.stages.iter().map(FeedForward::output_projection).collect()
    }

    pub fn layer_spec(&self) -> LayerSpec {
        LayerSpec::IntraFfn {
            stage_channels: self.stage_channels.clone(),
            hidden: self.stages.iter().map(FeedForward::hidden).collect(),
        }
    }

    pub fn register<T: Scalar>(&self, store: &mut ParamStore<T>, init: &mut ParamInit) -> Result<()> {
        store.add_batch_norm(&format!("{}.norm", self.prefix), self.channels())?;
        for stage in &self.stages {
            stage.register(store, init)?;
        }
        Ok(())
    }

    /// Batch norm is per-channel, so one norm over the whole map equals
    /// per-stage norms over the slices.
    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let (_, c, _, _) = s.tape.value(x).nchw()?;
        if c != self.channels() {
            return Err(Error::shape(format!(
                "{}: split sizes {:?} sum to {}, input has {c} channels",
                self.prefix,
                self.stage_channels,
                self.channels()
            )));
        }
        let xn = s.batch_norm(x, &format!("{}.norm", self.prefix))?;
        let parts = s.tape.split(xn, 1, &self.stage_channels)?;
        let outs = parts
            .into_iter()
            .zip(&self.stages)
            .map(|(part, ffn)| ffn.forward(s, part))
            .collect::<Result<Vec<_>>>()?;
        s.tape.concat(&outs, 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fractional_hidden_width_rejected() {
        assert_eq!(expand_channels(640, 2.0).unwrap(), 1280);
        assert_eq!(expand_channels(10, 1.5).unwrap(), 15);
        assert!(expand_channels(5, 1.5).is_err());
        assert!(expand_channels(5, 0.0).is_err());
    }
}
