use std::io::Write;

use clap::Args;
use mscsa_core::{report, CostReport};

use crate::config;
use crate::manifest::{now_ms, RunManifest};
use crate::{emit, CliError, CommonArgs, Format, Status};

/// Reference total (backbone plus MSCSA) for the bundled PVTv2-B1 config, in MACs.
pub const DEFAULT_REFERENCE_TOTAL: f64 = 2.3e9;

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Input image side; defaults to the config's input_resolution.
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Denominator of the percentage columns, in MACs.
    #[arg(long, default_value_t = DEFAULT_REFERENCE_TOTAL)]
    pub reference_total: f64,
}

pub fn build(args: &ReportArgs) -> Result<CostReport, CliError> {
    let cfg = args.common.load_config("pvtv2-b1")?;
    let resolution = args.resolution.unwrap_or(cfg.input_resolution);
    Ok(report(&cfg, resolution, args.reference_total)?)
}

pub fn run(args: &ReportArgs, out: &mut dyn Write) -> Result<Status, CliError> {
    let started = now_ms();
    let cfg = args.common.load_config("pvtv2-b1")?;
    let r = build(args)?;
    let text = match args.common.format {
        Format::Text => r.to_text(),
        Format::Structured => r.to_json() + "\n",
    };
    let manifest = RunManifest::new("report", config::hash(&cfg), cfg.seed, started);
    emit(out, &text, args.common.output.as_deref(), manifest)?;
    Ok(Status::Success)
}
