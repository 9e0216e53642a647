//! End-to-end assembly: multi-stage aggregation, the block stack and the
//! classification / dense-prediction variants.

mod config;
mod model;
mod pyramid;

pub use config::{BackboneProfile, MscsaConfig, Ratio, Variant};
pub use model::{Model, ModelOutput, MscsaBlock};
pub use pyramid::{synth_pyramid, Stage, StagePyramid};
