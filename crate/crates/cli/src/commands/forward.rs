use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use mscsa_core::{io, synth_pyramid, Mode, Model, ModelOutput, MscsaConfig, Session, Tensor, Variant};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config;
use crate::manifest::{now_ms, RunManifest};
use crate::{emit, CliError, CommonArgs, Format, Status};

#[derive(Debug, Clone, Args)]
pub struct ForwardArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Seeds both parameter init and the synthetic pyramid; defaults to the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config's variant (classification or dense).
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    /// Writes outputs as MSCT tensors (dense: one `<stem>.stage<i>.msct` per stage).
    #[arg(long)]
    pub dump_output: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputSummary {
    pub name: String,
    pub dims: Vec<usize>,
    pub sha256: String,
    pub mean: f64,
    pub max_abs: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForwardResult {
    pub variant: Variant,
    pub seed: u64,
    pub outputs: Vec<OutputSummary>,
}

/// Effective config: the loaded one with seed and variant overrides.
pub fn effective_config(args: &ForwardArgs) -> Result<MscsaConfig, CliError> {
    let mut cfg = args.common.load_config("mini")?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(variant) = args.variant {
        cfg.variant = variant;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Builds the model from `cfg`, runs it in eval mode on the seeded pyramid
/// and returns the named outputs.
pub fn forward(cfg: &MscsaConfig, batch: usize) -> Result<Vec<(String, Tensor<f32>)>, CliError> {
    if batch == 0 {
        return Err(CliError::Usage("batch must be positive".into()));
    }
    let (model, store) = Model::build::<f32>(cfg)?;
    let pyramid = synth_pyramid::<f32>(&cfg.profile, cfg.input_resolution, batch, cfg.seed)?;
    let mut s = Session::new(&store, Mode::Eval);
    Ok(match model.forward(&mut s, &pyramid)? {
        ModelOutput::Logits(v) => vec![("logits".into(), s.tape.value(v).clone())],
        ModelOutput::Pyramid(maps) => maps
            .iter()
            .enumerate()
            .map(|(i, &v)| (format!("stage{i}"), s.tape.value(v).clone()))
            .collect(),
    })
}

fn summarize(name: &str, t: &Tensor<f32>) -> OutputSummary {
    let bytes = io::encode(t).expect("f32 tensors encode");
    OutputSummary {
        name: name.into(),
        dims: t.dims().to_vec(),
        sha256: hex::encode(Sha256::digest(&bytes)),
        mean: t.mean() as f64,
        max_abs: t.max_abs() as f64,
    }
}

/// Dump path of output `name`: the path itself for a single output,
/// otherwise `<stem>.<name>.msct` beside it.
pub fn dump_path(base: &Path, name: &str, count: usize) -> PathBuf {
    if count == 1 {
        return base.to_path_buf();
    }
    let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    base.with_file_name(format!("{stem}.{name}.msct"))
}

pub fn run(args: &ForwardArgs, out: &mut dyn Write) -> Result<Status, CliError> {
    let started = now_ms();
    let cfg = effective_config(args)?;
    let outputs = forward(&cfg, args.batch)?;
    for (name, t) in &outputs {
        if !t.is_finite() {
            return Err(CliError::Numeric(format!("{name} contains non-finite values")));
        }
    }
    if let Some(base) = &args.dump_output {
        let paths: Vec<PathBuf> = outputs
            .iter()
            .map(|(name, t)| {
                let path = dump_path(base, name, outputs.len());
                io::save(&path, t).map(|_| path)
            })
            .collect::<Result<_, _>>()?;
        RunManifest::new("forward", config::hash(&cfg), cfg.seed, started).finish(paths)?;
    }
    let result = ForwardResult {
        variant: cfg.variant,
        seed: cfg.seed,
        outputs: outputs.iter().map(|(n, t)| summarize(n, t)).collect(),
    };
    let text = match args.common.format {
        Format::Structured => serde_json::to_string_pretty(&result).expect("serializes") + "\n",
        Format::Text => {
            let mut s = format!("forward: variant {:?}, seed {}\n", cfg.variant, cfg.seed);
            for o in &result.outputs {
                s += &format!(
                    "{:<8} dims {:?} mean {:+.6e} max|x| {:.6e} sha256 {}\n",
                    o.name, o.dims, o.mean, o.max_abs, o.sha256
                );
            }
            s
        }
    };
    let manifest = RunManifest::new("forward", config::hash(&cfg), cfg.seed, started);
    emit(out, &text, args.common.output.as_deref(), manifest)?;
    Ok(Status::Success)
}
