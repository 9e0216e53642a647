//! Shared fixtures for the layer benchmarks.

use mscsa_core::{synth_pyramid, Model, MscsaConfig, ParamStore, StagePyramid};

/// Model, parameters and a batch-1 pyramid for `cfg`.
pub fn fixture(cfg: &MscsaConfig) -> (Model, ParamStore<f32>, StagePyramid<f32>) {
    let (model, store) = Model::build::<f32>(cfg).expect("valid config");
    let pyramid = synth_pyramid(&cfg.profile, cfg.input_resolution, 1, cfg.seed).expect("valid profile");
    (model, store, pyramid)
}
