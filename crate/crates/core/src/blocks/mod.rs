//! Cross-scale attention, FFN and Intra-FFN layers.
//!
//! Each layer owns a parameter-name prefix, registers its tensors in a
//! [`ParamStore`](crate::ParamStore), and runs its forward pass on a
//! [`Session`](crate::Session). Forwards apply the layer's pre-norm and
//! return the residual branch; the caller adds the residual.

mod csa;
mod ffn;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use csa::{downsampled_size, kv_token_count, CrossScaleAttention, CsaTrace, MIN_SPATIAL};
pub use ffn::{expand_channels, FeedForward, IntraFeedForward};

use crate::error::Error;

/// How the coarser key/value scales are produced from the input map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DownsampleStrategy {
    /// Two independent depthwise convs (stride 2 and stride 3).
    #[default]
    #[serde(rename = "parallel-dwconv")]
    ParallelDwConv,
    /// Parameter-free average pooling to the same two sizes.
    AvgPool,
    /// Second scale computed from the first by another stride-2 conv.
    #[serde(rename = "cascade-dwconv")]
    CascadeDwConv,
    /// Only the stride-2 scale; the coarsest map is dropped.
    #[serde(rename = "single-dwconv")]
    SingleDwConv,
}

impl DownsampleStrategy {
    pub const ALL: [DownsampleStrategy; 4] = [
        DownsampleStrategy::ParallelDwConv,
        DownsampleStrategy::AvgPool,
        DownsampleStrategy::CascadeDwConv,
        DownsampleStrategy::SingleDwConv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DownsampleStrategy::ParallelDwConv => "parallel-dwconv",
            DownsampleStrategy::AvgPool => "avg-pool",
            DownsampleStrategy::CascadeDwConv => "cascade-dwconv",
            DownsampleStrategy::SingleDwConv => "single-dwconv",
        }
    }

    /// Number of key/value scales including the full-resolution one.
    pub fn num_scales(self) -> usize {
        match self {
            DownsampleStrategy::SingleDwConv => 2,
            _ => 3,
        }
    }
}

impl fmt::Display for DownsampleStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DownsampleStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::config(format!("unknown downsample strategy {s:?}")))
    }
}
