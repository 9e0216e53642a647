use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::blocks::{expand_channels, DownsampleStrategy, MIN_SPATIAL};
use crate::error::{Error, Result};

/// Positive rational number written as `"num/den"` (or a bare integer).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub num: usize,
    pub den: usize,
}

impl Ratio {
    pub fn new(num: usize, den: usize) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::config(format!("ratio {num}/{den} must be positive")));
        }
        Ok(Self { num, den })
    }

    /// `value * num / den` when that is an integer.
    pub fn apply_exact(self, value: usize) -> Option<usize> {
        let scaled = value * self.num;
        scaled.is_multiple_of(self.den).then_some(scaled / self.den)
    }

    pub fn apply_floor(self, value: usize) -> usize {
        value * self.num / self.den
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for Ratio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parse = |t: &str| {
            t.trim().parse::<usize>().map_err(|_| Error::config(format!("bad ratio {s:?}")))
        };
        match s.split_once('/') {
            Some((n, d)) => Ratio::new(parse(n)?, parse(d)?),
            None => Ratio::new(parse(s)?, 1),
        }
    }
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Ratio {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Classification,
    Dense,
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classification" => Ok(Variant::Classification),
            "dense" => Ok(Variant::Dense),
            _ => Err(Error::config(format!("unknown variant {s:?}"))),
        }
    }
}

/// Channel widths and strides of the backbone stages feeding the module.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneProfile {
    pub channels: Vec<usize>,
    pub strides: Vec<usize>,
}

impl BackboneProfile {
    /// PVTv2-B1 stage widths at strides 4/8/16/32.
    pub fn pvtv2_b1() -> Self {
        Self { channels: vec![64, 128, 320, 512], strides: vec![4, 8, 16, 32] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.len() != self.strides.len() {
            return Err(Error::config(format!(
                "profile needs matching non-empty channels {:?} and strides {:?}",
                self.channels, self.strides
            )));
        }
        if self.channels.contains(&0) || self.strides.contains(&0) {
            return Err(Error::config("profile channels and strides must be positive"));
        }
        if self.strides.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::config(format!("strides {:?} must be strictly increasing", self.strides)));
        }
        Ok(())
    }

    /// Spatial extent of every stage for a square input of `resolution`.
    pub fn stage_sizes(&self, resolution: usize) -> Vec<usize> {
        self.strides.iter().map(|&s| resolution.div_ceil(s)).collect()
    }
}

/// Full architectural configuration, loaded from a TOML `.cfg` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MscsaConfig {
    pub profile: BackboneProfile,
    pub input_resolution: usize,
    /// Pooled size as a fraction of the input resolution.
    pub pool_target: Ratio,
    /// Per-stage channel multiplier applied by 1x1 convs before concatenation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub squeeze_ratio: Option<Ratio>,
    pub depth: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub mlp_ratio: f64,
    #[serde(default)]
    pub strategy: DownsampleStrategy,
    pub variant: Variant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fusion_channels: Option<usize>,
    pub num_classes: usize,
    #[serde(default)]
    pub seed: u64,
}

impl MscsaConfig {
    /// The PVTv2-B1 row: pool 1/32, squeeze 5/8, depth 1, 8 heads of 24, MLP ratio 2.
    pub fn pvtv2_b1() -> Self {
        Self {
            profile: BackboneProfile::pvtv2_b1(),
            input_resolution: 224,
            pool_target: Ratio { num: 1, den: 32 },
            squeeze_ratio: Some(Ratio { num: 5, den: 8 }),
            depth: 1,
            heads: 8,
            head_dim: 24,
            mlp_ratio: 2.0,
            strategy: DownsampleStrategy::ParallelDwConv,
            variant: Variant::Classification,
            fusion_channels: None,
            num_classes: 1000,
            seed: 0,
        }
    }

    /// Smallest configuration with three non-degenerate key/value scales:
    /// two stages of 8 and 16 channels, a 6x6 coarsest map, 2 heads of width 4.
    pub fn mini() -> Self {
        Self {
            profile: BackboneProfile { channels: vec![8, 16], strides: vec![16, 32] },
            input_resolution: 192,
            pool_target: Ratio { num: 1, den: 32 },
            squeeze_ratio: None,
            depth: 1,
            heads: 2,
            head_dim: 4,
            mlp_ratio: 2.0,
            strategy: DownsampleStrategy::ParallelDwConv,
            variant: Variant::Classification,
            fusion_channels: None,
            num_classes: 2,
            seed: 0,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::format(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.profile.validate()?;
        if self.heads == 0 || self.head_dim == 0 {
            return Err(Error::config("heads and head_dim must be positive"));
        }
        let pooled = self.pooled_size();
        if pooled < MIN_SPATIAL {
            return Err(Error::config(format!(
                "pooled size {pooled} ({} of {}) is below the {MIN_SPATIAL}x{MIN_SPATIAL} minimum",
                self.pool_target, self.input_resolution
            )));
        }
        let squeezed = self.squeezed_channels()?;
        for &c in &squeezed {
            expand_channels(c, self.mlp_ratio)?;
        }
        expand_channels(squeezed.iter().sum(), self.mlp_ratio)?;
        if self.variant == Variant::Classification && self.num_classes == 0 {
            return Err(Error::config("classification needs num_classes >= 1"));
        }
        if self.fusion_channels == Some(0) {
            return Err(Error::config("fusion_channels must be positive"));
        }
        Ok(())
    }

    /// Side of the square multi-stage map.
    pub fn pooled_size(&self) -> usize {
        self.pool_target.apply_floor(self.input_resolution)
    }

    /// Per-stage channels after the optional squeeze; ratios that do not
    /// give integers are rejected.
    pub fn squeezed_channels(&self) -> Result<Vec<usize>> {
        match self.squeeze_ratio {
            None => Ok(self.profile.channels.clone()),
            Some(r) => self
                .profile
                .channels
                .iter()
                .map(|&c| {
                    r.apply_exact(c).filter(|&v| v > 0).ok_or_else(|| {
                        Error::config(format!("squeeze ratio {r} on {c} channels is not an integer"))
                    })
                })
                .collect(),
        }
    }

    pub fn total_channels(&self) -> Result<usize> {
        Ok(self.squeezed_channels()?.iter().sum())
    }

    pub fn fusion_channels_per_stage(&self) -> Result<Vec<usize>> {
        let squeezed = self.squeezed_channels()?;
        Ok(match self.fusion_channels {
            Some(f) => vec![f; squeezed.len()],
            None => squeezed,
        })
    }
}
