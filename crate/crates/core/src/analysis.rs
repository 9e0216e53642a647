//! Analytic multiply-accumulate (MAC) and parameter counts.
//!
//! Headline "FLOPs" are multiply-accumulates of convolutions and matrix
//! products. Norms, activations, softmax, pooling and residual adds are
//! tallied in a separate `elementwise` column and never enter the
//! headline number.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::assembly::{Model, MscsaConfig, Variant};
use crate::blocks::{downsampled_size, kv_token_count, DownsampleStrategy};
use crate::error::{Error, Result};

/// Layer descriptions the cost model understands.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        bias: bool,
    },
    /// Per-token affine map.
    Linear { inputs: usize, outputs: usize, bias: bool },
    Csa { channels: usize, heads: usize, head_dim: usize, strategy: DownsampleStrategy },
    Ffn { channels: usize, hidden: usize },
    IntraFfn { stage_channels: Vec<usize>, hidden: Vec<usize> },
}

/// MACs of one cross-scale attention layer, split by sub-operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CsaMacs {
    pub query: u64,
    pub downsample: u64,
    pub key_value: u64,
    pub scores: u64,
    pub weighted_values: u64,
    pub conv_path: u64,
    pub output: u64,
}

impl CsaMacs {
    pub fn total(&self) -> u64 {
        self.query
            + self.downsample
            + self.key_value
            + self.scores
            + self.weighted_values
            + self.conv_path
            + self.output
    }
}

fn conv_out(len: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (len + 2 * padding).saturating_sub(kernel) / stride + 1
}

/// Spatial sizes of the downsampled scales (excluding full resolution).
fn coarse_sizes(h: usize, w: usize, strategy: DownsampleStrategy) -> Vec<(usize, usize)> {
    let s1 = (downsampled_size(h, 2), downsampled_size(w, 2));
    match strategy {
        DownsampleStrategy::SingleDwConv => vec![s1],
        DownsampleStrategy::CascadeDwConv => vec![s1, (downsampled_size(s1.0, 2), downsampled_size(s1.1, 2))],
        _ => vec![s1, (downsampled_size(h, 3), downsampled_size(w, 3))],
    }
}

/// Per-sub-operation MACs of a CSA layer over an `n x c x h x w` input.
pub fn csa_macs(
    channels: usize,
    heads: usize,
    head_dim: usize,
    strategy: DownsampleStrategy,
    n: usize,
    h: usize,
    w: usize,
) -> CsaMacs {
    let (c, hw) = (channels as u64, (h * w) as u64);
    let kd = (heads * head_dim) as u64;
    let vd = 2 * kd;
    let tokens = kv_token_count(h, w, strategy) as u64;
    let downsample = match strategy {
        DownsampleStrategy::AvgPool => 0,
        _ => coarse_sizes(h, w, strategy).iter().map(|&(a, b)| (a * b) as u64 * c * 9).sum(),
    };
    let n = n as u64;
    CsaMacs {
        query: n * hw * c * kd,
        downsample: n * downsample,
        key_value: n * tokens * c * (kd + vd),
        scores: n * hw * tokens * kd,
        weighted_values: n * hw * tokens * vd,
        conv_path: n * hw * vd * 9,
        output: n * hw * vd * c,
    }
}

/// Headline MACs of `layer` applied to an `n x _ x h x w` input
/// (`Linear` treats `n * h * w` as the token count).
pub fn count_macs(layer: &LayerSpec, n: usize, h: usize, w: usize) -> u64 {
    let hw = (h * w) as u64;
    match layer {
        LayerSpec::Conv { in_channels, out_channels, kernel, stride, padding, groups, .. } => {
            let (oh, ow) = (conv_out(h, *kernel, *stride, *padding), conv_out(w, *kernel, *stride, *padding));
            (n * oh * ow * out_channels * (in_channels / groups) * kernel * kernel) as u64
        }
        LayerSpec::Linear { inputs, outputs, .. } => n as u64 * hw * (*inputs * *outputs) as u64,
        LayerSpec::Csa { channels, heads, head_dim, strategy } => {
            csa_macs(*channels, *heads, *head_dim, *strategy, n, h, w).total()
        }
        LayerSpec::Ffn { channels, hidden } => {
            let (c, e) = (*channels as u64, *hidden as u64);
            n as u64 * (hw * c * e * 2 + hw * e * 9)
        }
        LayerSpec::IntraFfn { stage_channels, hidden } => stage_channels
            .iter()
            .zip(hidden)
            .map(|(&c, &e)| count_macs(&LayerSpec::Ffn { channels: c, hidden: e }, n, h, w))
            .sum(),
    }
}

/// Trainable parameter count of `layer`, including norms owned by it.
pub fn layer_params(layer: &LayerSpec) -> u64 {
    let conv = |out: usize, inp: usize, k: usize, bias: bool| (out * inp * k * k + if bias { out } else { 0 }) as u64;
    match layer {
        LayerSpec::Conv { in_channels, out_channels, kernel, groups, bias, .. } => {
            conv(*out_channels, in_channels / groups, *kernel, *bias)
        }
        LayerSpec::Linear { inputs, outputs, bias } => conv(*outputs, *inputs, 1, *bias),
        LayerSpec::Csa { channels, heads, head_dim, strategy } => {
            let c = *channels;
            let kd = heads * head_dim;
            let vd = 2 * kd;
            let norm = 2 * c as u64;
            let downsample = match strategy {
                DownsampleStrategy::AvgPool => 0,
                DownsampleStrategy::SingleDwConv => conv(c, 1, 3, false) + norm,
                _ => 2 * (conv(c, 1, 3, false) + norm),
            };
            let scales = strategy.num_scales() as u64;
            norm + conv(kd, c, 1, true)
                + downsample
                + scales * (conv(kd, c, 1, true) + conv(vd, c, 1, true))
                + conv(vd, 1, 3, true)
                + conv(c, vd, 1, true)
        }
        LayerSpec::Ffn { channels, hidden } => 2 * *channels as u64 + ffn_body_params(*channels, *hidden),
        LayerSpec::IntraFfn { stage_channels, hidden } => {
            let total: usize = stage_channels.iter().sum();
            2 * total as u64
                + stage_channels.iter().zip(hidden).map(|(&c, &e)| ffn_body_params(c, e)).sum::<u64>()
        }
    }
}

fn ffn_body_params(c: usize, e: usize) -> u64 {
    ((c * e + e) + (e * 9 + e) + (e * c + c)) as u64
}

/// Non-MAC elementwise operations (norms, activations, softmax and its
/// scaling, pooling, residual adds) for one application of `layer`.
pub fn elementwise_ops(layer: &LayerSpec, n: usize, h: usize, w: usize) -> u64 {
    let hw = h * w;
    let count = match layer {
        LayerSpec::Conv { .. } | LayerSpec::Linear { .. } => 0,
        LayerSpec::Csa { channels, heads, head_dim, strategy } => {
            let c = *channels;
            let vd = 2 * heads * head_dim;
            let tokens = kv_token_count(h, w, *strategy);
            let coarse: usize = coarse_sizes(h, w, *strategy).iter().map(|(a, b)| a * b).sum();
            let downsample = match strategy {
                DownsampleStrategy::AvgPool => c * hw * 2,
                _ => c * coarse,
            };
            // pre-norm, downsample, scale + softmax, two hardswish, pcp add, residual
            c * hw + downsample + 2 * heads * hw * tokens + 3 * vd * hw + c * hw
        }
        LayerSpec::Ffn { channels, hidden } => 2 * channels * hw + hidden * hw,
        LayerSpec::IntraFfn { stage_channels, hidden } => {
            let c: usize = stage_channels.iter().sum();
            let e: usize = hidden.iter().sum();
            2 * c * hw + e * hw
        }
    };
    (n * count) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Component {
    Csa,
    Ffn,
    IntraFfn,
    Aggregation,
    Head,
    Fusion,
}

impl Component {
    pub fn label(self) -> &'static str {
        match self {
            Component::Csa => "CSA",
            Component::Ffn => "FFN",
            Component::IntraFfn => "Intra-FFN",
            Component::Aggregation => "Aggregation",
            Component::Head => "Head",
            Component::Fusion => "Fusion",
        }
    }

    fn is_block(self) -> bool {
        matches!(self, Component::Csa | Component::Ffn | Component::IntraFfn)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub component: Component,
    pub macs: u64,
    pub params: u64,
    pub elementwise: u64,
    pub percent: f64,
}

/// Aggregate over all layers of one component. `macs_per_instance` is the
/// cost of a single layer (all instances of a component are identical).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentCost {
    pub component: Component,
    pub instances: usize,
    pub macs_per_instance: u64,
    pub percent_per_instance: f64,
    pub macs_total: u64,
    pub percent_total: f64,
    pub params_total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub resolution: usize,
    pub pooled_size: usize,
    /// Denominator of every percentage, in MACs.
    pub reference_total: f64,
    pub layers: Vec<LayerCost>,
    pub components: Vec<ComponentCost>,
    pub total_macs: u64,
    pub total_params: u64,
    pub total_elementwise: u64,
    /// MACs of the block stack alone (CSA, FFN, Intra-FFN layers).
    pub block_macs: u64,
}

fn percent(macs: u64, reference: f64) -> f64 {
    if reference > 0.0 {
        macs as f64 / reference * 100.0
    } else {
        0.0
    }
}

/// One costed layer: `(name, component, spec, h, w)`.
type LayerRow = (String, Component, LayerSpec, usize, usize);

/// Every costed layer of the model.
fn layer_table(cfg: &MscsaConfig, resolution: usize) -> Result<Vec<LayerRow>> {
    let cfg = MscsaConfig { input_resolution: resolution, ..cfg.clone() };
    let model = Model::new(&cfg)?;
    let pooled = cfg.pooled_size();
    let squeezed = model.squeezed_channels().to_vec();
    let mut rows = Vec::new();
    if cfg.squeeze_ratio.is_some() {
        for (i, (&c, &sq)) in cfg.profile.channels.iter().zip(&squeezed).enumerate() {
            rows.push((
                format!("squeeze{i}"),
                Component::Aggregation,
                LayerSpec::Linear { inputs: c, outputs: sq, bias: true },
                pooled,
                pooled,
            ));
        }
    }
    for (b, block) in model.blocks().iter().enumerate() {
        rows.push((format!("block{b}.csa1"), Component::Csa, block.csa1.layer_spec(), pooled, pooled));
        rows.push((format!("block{b}.intra_ffn"), Component::IntraFfn, block.intra_ffn.layer_spec(), pooled, pooled));
        rows.push((format!("block{b}.csa2"), Component::Csa, block.csa2.layer_spec(), pooled, pooled));
        rows.push((format!("block{b}.ffn"), Component::Ffn, block.ffn.layer_spec(), pooled, pooled));
    }
    let c = model.channels();
    match cfg.variant {
        Variant::Classification => rows.push((
            "head".into(),
            Component::Head,
            LayerSpec::Linear { inputs: c, outputs: cfg.num_classes, bias: true },
            1,
            1,
        )),
        Variant::Dense => {
            let fusion = cfg.fusion_channels_per_stage()?;
            let sizes = cfg.profile.stage_sizes(resolution);
            for (i, (((&ci, &sq), &f), &s)) in
                cfg.profile.channels.iter().zip(&squeezed).zip(&fusion).zip(&sizes).enumerate()
            {
                let gen = LayerSpec::Linear { inputs: sq, outputs: f, bias: true };
                rows.push((format!("fuse{i}.weight_gen"), Component::Fusion, gen.clone(), s, s));
                rows.push((format!("fuse{i}.bias_gen"), Component::Fusion, gen, s, s));
                rows.push((
                    format!("fuse{i}.proj"),
                    Component::Fusion,
                    LayerSpec::Linear { inputs: ci, outputs: f, bias: true },
                    s,
                    s,
                ));
            }
        }
    }
    Ok(rows)
}

/// Cost of the configured model on one `resolution x resolution` image.
/// Percentages are relative to `reference_total` MACs.
pub fn report(cfg: &MscsaConfig, resolution: usize, reference_total: f64) -> Result<CostReport> {
    if !(reference_total.is_finite() && reference_total >= 0.0) {
        return Err(Error::config(format!("reference total {reference_total} must be finite and >= 0")));
    }
    let cfg_at = MscsaConfig { input_resolution: resolution, ..cfg.clone() };
    let rows = layer_table(cfg, resolution)?;
    let layers: Vec<LayerCost> = rows
        .into_iter()
        .map(|(name, component, spec, h, w)| {
            let macs = count_macs(&spec, 1, h, w);
            LayerCost {
                name,
                component,
                macs,
                params: layer_params(&spec),
                elementwise: elementwise_ops(&spec, 1, h, w),
                percent: percent(macs, reference_total),
            }
        })
        .collect();
    let order = [
        Component::Csa,
        Component::Ffn,
        Component::IntraFfn,
        Component::Aggregation,
        Component::Head,
        Component::Fusion,
    ];
    let components = order
        .into_iter()
        .filter_map(|component| {
            let members: Vec<&LayerCost> = layers.iter().filter(|l| l.component == component).collect();
            if members.is_empty() && !component.is_block() {
                return None;
            }
            let macs_total: u64 = members.iter().map(|l| l.macs).sum();
            let per_instance = match component {
                // fusion has three convs per stage; report the per-stage triple
                Component::Fusion | Component::Aggregation => {
                    members.first().map(|_| macs_total / cfg_at.profile.channels.len() as u64).unwrap_or(0)
                }
                _ => members.first().map(|l| l.macs).unwrap_or(0),
            };
            Some(ComponentCost {
                component,
                instances: members.len(),
                macs_per_instance: per_instance,
                percent_per_instance: percent(per_instance, reference_total),
                macs_total,
                percent_total: percent(macs_total, reference_total),
                params_total: members.iter().map(|l| l.params).sum(),
            })
        })
        .collect();
    let total_macs = layers.iter().map(|l| l.macs).sum();
    let block_macs = layers.iter().filter(|l| l.component.is_block()).map(|l| l.macs).sum();
    Ok(CostReport {
        resolution,
        pooled_size: cfg_at.pooled_size(),
        reference_total,
        total_params: layers.iter().map(|l| l.params).sum(),
        total_elementwise: layers.iter().map(|l| l.elementwise).sum(),
        layers,
        components,
        total_macs,
        block_macs,
    })
}

/// Trainable parameters of the configured model, from the cost model.
pub fn count_params(cfg: &MscsaConfig) -> Result<u64> {
    Ok(layer_table(cfg, cfg.input_resolution)?.iter().map(|(_, _, spec, _, _)| layer_params(spec)).sum())
}

impl CostReport {
    pub fn component(&self, component: Component) -> Option<&ComponentCost> {
        self.components.iter().find(|c| c.component == component)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format(e.to_string()))
    }

    /// Aligned plain-text tables (per layer, then per component).
    pub fn to_text(&self) -> String {
        let g = |m: u64| m as f64 / 1e9;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "MSCSA cost report: {r}x{r} input, {p}x{p} multi-stage map, reference {ref_g:.3} G",
            r = self.resolution,
            p = self.pooled_size,
            ref_g = self.reference_total / 1e9
        );
        let _ = writeln!(out, "FLOPs are counted as multiply-accumulates (MACs).");
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<24} {:<12} {:>12} {:>8} {:>12} {:>14}",
            "layer", "component", "FLOPs (G)", "%", "params", "elementwise"
        );
        for l in &self.layers {
            let _ = writeln!(
                out,
                "{:<24} {:<12} {:>12.4} {:>8.2} {:>12} {:>14}",
                l.name,
                l.component.label(),
                g(l.macs),
                l.percent,
                l.params,
                l.elementwise
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<12} {:>9} {:>14} {:>8} {:>14} {:>8} {:>12}",
            "component", "instances", "G / instance", "%", "G total", "%", "params"
        );
        for c in &self.components {
            let _ = writeln!(
                out,
                "{:<12} {:>9} {:>14.4} {:>8.2} {:>14.4} {:>8.2} {:>12}",
                c.component.label(),
                c.instances,
                g(c.macs_per_instance),
                c.percent_per_instance,
                g(c.macs_total),
                c.percent_total,
                c.params_total
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "total {:.4} G ({:.2}%), blocks {:.4} G, params {}, elementwise {}",
            g(self.total_macs),
            percent(self.total_macs, self.reference_total),
            g(self.block_macs),
            self.total_params,
            self.total_elementwise
        );
        out
    }
}
