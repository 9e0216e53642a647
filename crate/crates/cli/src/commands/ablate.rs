use std::io::Write;

use clap::Args;
use mscsa_core::analysis::Component;
use mscsa_core::blocks::kv_token_count;
use mscsa_core::{report, DownsampleStrategy, Model, MscsaConfig};
use serde::{Deserialize, Serialize};

use super::forward::forward;
use super::report::DEFAULT_REFERENCE_TOTAL;
use crate::config;
use crate::manifest::{now_ms, RunManifest};
use crate::{emit, CliError, CommonArgs, Format, Status};

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated strategies; defaults to all four.
    #[arg(long, value_delimiter = ',')]
    pub strategies: Vec<DownsampleStrategy>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub strategy: DownsampleStrategy,
    pub scales: usize,
    /// Concatenated key/value tokens at the pooled size.
    pub kv_tokens: usize,
    /// Trainable parameters of the key/value downsampling path.
    pub downsample_params: usize,
    pub csa_params: u64,
    pub csa_macs: u64,
    pub total_macs: u64,
    /// Dims of every model output, from a seeded forward pass.
    pub output_dims: Vec<Vec<usize>>,
}

pub fn ablate(base: &MscsaConfig, strategies: &[DownsampleStrategy]) -> Result<Vec<AblationRow>, CliError> {
    strategies
        .iter()
        .map(|&strategy| {
            let cfg = MscsaConfig { strategy, ..base.clone() };
            let (_, store) = Model::build::<f32>(&cfg)?;
            let downsample_params = store
                .trainable()
                .filter(|(name, _)| name.contains(".down"))
                .map(|(_, t)| t.numel())
                .sum();
            let cost = report(&cfg, cfg.input_resolution, DEFAULT_REFERENCE_TOTAL)?;
            let csa = cost.component(Component::Csa);
            let pooled = cfg.pooled_size();
            let outputs = forward(&cfg, 1)?;
            Ok(AblationRow {
                strategy,
                scales: strategy.num_scales(),
                kv_tokens: kv_token_count(pooled, pooled, strategy),
                downsample_params,
                csa_params: csa.map_or(0, |c| c.params_total),
                csa_macs: csa.map_or(0, |c| c.macs_total),
                total_macs: cost.total_macs,
                output_dims: outputs.iter().map(|(_, t)| t.dims().to_vec()).collect(),
            })
        })
        .collect()
}

fn to_text(rows: &[AblationRow]) -> String {
    let mut s = format!(
        "{:<16} {:>6} {:>9} {:>11} {:>10} {:>12} {:>12}  {}\n",
        "strategy", "scales", "kv_tokens", "down_params", "csa_params", "csa_macs", "total_macs", "output_dims"
    );
    for r in rows {
        s += &format!(
            "{:<16} {:>6} {:>9} {:>11} {:>10} {:>12} {:>12}  {:?}\n",
            r.strategy.name(),
            r.scales,
            r.kv_tokens,
            r.downsample_params,
            r.csa_params,
            r.csa_macs,
            r.total_macs,
            r.output_dims
        );
    }
    s
}

pub fn run(args: &AblateArgs, out: &mut dyn Write) -> Result<Status, CliError> {
    let started = now_ms();
    let cfg = args.common.load_config("mini")?;
    let strategies =
        if args.strategies.is_empty() { DownsampleStrategy::ALL.to_vec() } else { args.strategies.clone() };
    let rows = ablate(&cfg, &strategies)?;
    let text = match args.common.format {
        Format::Text => to_text(&rows),
        Format::Structured => serde_json::to_string_pretty(&rows).expect("serializes") + "\n",
    };
    let manifest = RunManifest::new("ablate", config::hash(&cfg), cfg.seed, started);
    emit(out, &text, args.common.output.as_deref(), manifest)?;
    Ok(Status::Success)
}
