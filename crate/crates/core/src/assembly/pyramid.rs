use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::BackboneProfile;
use crate::error::{Error, Result};
use crate::ops;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Stage<T> {
    /// `N x C_i x H_i x W_i` features.
    pub features: Tensor<T>,
    /// Downsampling factor relative to the input image.
    pub stride: usize,
}

/// Per-stage backbone features, finest first.
#[derive(Debug, Clone)]
pub struct StagePyramid<T> {
    stages: Vec<Stage<T>>,
}

impl<T: Scalar> StagePyramid<T> {
    pub fn new(stages: Vec<Stage<T>>) -> Result<Self> {
        let first = stages.first().ok_or_else(|| Error::config("pyramid needs at least one stage"))?;
        let batch = first.features.nchw()?.0;
        for s in &stages {
            if s.features.nchw()?.0 != batch {
                return Err(Error::shape("pyramid stages disagree on batch size"));
            }
        }
        if stages.windows(2).any(|p| p[0].stride >= p[1].stride) {
            return Err(Error::config("pyramid strides must be strictly increasing"));
        }
        Ok(Self { stages })
    }

    pub fn stages(&self) -> &[Stage<T>] {
        &self.stages
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn batch(&self) -> usize {
        self.stages[0].features.dims()[0]
    }

    pub fn channels(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.features.dims()[1]).collect()
    }

    /// `(H_i, W_i)` per stage.
    pub fn resolutions(&self) -> Vec<(usize, usize)> {
        self.stages.iter().map(|s| (s.features.dims()[2], s.features.dims()[3])).collect()
    }

    /// Batch entries `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let stages = self
            .stages
            .iter()
            .map(|s| {
                let picked: Vec<_> = indices
                    .iter()
                    .map(|&i| ops::slice_axis(&s.features, 0, i, 1))
                    .collect::<Result<_>>()?;
                let refs: Vec<_> = picked.iter().collect();
                Ok(Stage { features: ops::concat(&refs, 0)?, stride: s.stride })
            })
            .collect::<Result<_>>()?;
        Self::new(stages)
    }
}

/// Seeded standard-normal features laid out like the profile's backbone.
///
/// Sample `b` is drawn from stream `b` of a ChaCha generator keyed by
/// `seed`, so a batch of two stacks two independent single draws.
pub fn synth_pyramid<T: Scalar>(
    profile: &BackboneProfile,
    resolution: usize,
    batch: usize,
    seed: u64,
) -> Result<StagePyramid<T>> {
    profile.validate()?;
    if batch == 0 || resolution == 0 {
        return Err(Error::config("batch and resolution must be positive"));
    }
    let sizes = profile.stage_sizes(resolution);
    let mut data: Vec<Vec<T>> = profile
        .channels
        .iter()
        .zip(&sizes)
        .map(|(&c, &s)| Vec::with_capacity(batch * c * s * s))
        .collect();
    for b in 0..batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(b as u64);
        for ((buf, &c), &s) in data.iter_mut().zip(&profile.channels).zip(&sizes) {
            buf.extend(Tensor::<T>::randn(&[c, s, s], 1.0, &mut rng).into_data());
        }
    }
    let stages = data
        .into_iter()
        .zip(profile.channels.iter().zip(&sizes).zip(&profile.strides))
        .map(|(buf, ((&c, &s), &stride))| {
            Ok(Stage { features: Tensor::new(&[batch, c, s, s], buf)?, stride })
        })
        .collect::<Result<_>>()?;
    StagePyramid::new(stages)
}
