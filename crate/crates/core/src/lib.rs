//! Multi-stage cross-scale attention (MSCSA) as a from-scratch numerical
//! library.
//!
//! The crate is layered bottom-up:
//!
//! * [`tensor`] and [`ops`]: a dense NCHW tensor and the forward/backward
//!   kernels the model needs.
//! * [`autodiff`]: a reverse-mode tape over those kernels, plus a central
//!   difference oracle for certifying gradients.
//! * [`blocks`]: cross-scale attention, FFN and Intra-FFN layers.
//! * [`assembly`]: multi-stage aggregation, the block stack and the
//!   classification / dense-prediction variants.
//! * [`analysis`]: an analytic multiply-accumulate and parameter count model.

pub mod analysis;
pub mod assembly;
pub mod autodiff;
pub mod blocks;
pub mod error;
pub mod io;
pub mod ops;
pub mod params;
pub mod scalar;
pub mod tensor;

pub use crate::analysis::{count_params, report, CostReport};
pub use crate::assembly::{
    synth_pyramid, BackboneProfile, Model, ModelOutput, MscsaConfig, Ratio, Stage, StagePyramid, Variant,
};
pub use crate::autodiff::{finite_diff_grad, relative_error, Gradients, Mode, Session, Tape, Var};
pub use crate::blocks::{CrossScaleAttention, DownsampleStrategy, FeedForward, IntraFeedForward};
pub use crate::error::{Error, Result};
pub use crate::params::ParamStore;
pub use crate::scalar::Scalar;
pub use crate::tensor::{ConvSpec, Tensor};
