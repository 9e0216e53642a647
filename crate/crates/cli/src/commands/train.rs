use std::io::Write;

use clap::Args;
use mscsa_core::{synth_pyramid, Mode, Model, ModelOutput, MscsaConfig, ParamStore, Result, Session, StagePyramid, Variant};
use serde::{Deserialize, Serialize};

use crate::config;
use crate::manifest::{now_ms, RunManifest};
use crate::{emit, CliError, CommonArgs, Format, Status};

/// Number of synthetic samples to overfit.
pub const SAMPLES: usize = 8;
/// Pass iff the final loss is below this.
pub const TARGET_LOSS: f64 = 0.01;
const CURVE_EVERY: usize = 25;

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainResult {
    pub seed: u64,
    pub steps: usize,
    pub lr: f64,
    /// Loss before each step.
    pub curve: Vec<f64>,
    /// Train-mode loss after the last step.
    pub final_loss: f64,
    pub target: f64,
    pub pass: bool,
}

/// Alternating two-class labels.
pub fn labels(n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|i| i % classes).collect()
}

type Named = Vec<(String, mscsa_core::Tensor<f64>)>;

/// Train-mode cross-entropy, its parameter gradients and running-stat updates.
fn step_loss(
    model: &Model,
    store: &ParamStore<f64>,
    pyramid: &StagePyramid<f64>,
    labels: &[usize],
    with_grads: bool,
) -> Result<(f64, Named, Named)> {
    let mut s = Session::new(store, Mode::Train);
    let ModelOutput::Logits(logits) = model.forward(&mut s, pyramid)? else {
        return Err(mscsa_core::Error::Config("toy training needs the classification variant".into()));
    };
    let loss = s.tape.cross_entropy(logits, labels)?;
    let value = s.tape.value(loss).item()?;
    let grads = if with_grads {
        let g = s.tape.backward(loss)?;
        s.param_grads(&g).into_iter().collect()
    } else {
        Vec::new()
    };
    Ok((value, grads, s.into_updates()))
}

/// Plain SGD on [`SAMPLES`] seeded pyramids with alternating labels.
pub fn train(cfg: &MscsaConfig, steps: usize, lr: f64) -> Result<TrainResult> {
    if cfg.variant != Variant::Classification {
        return Err(mscsa_core::Error::Config("toy training needs the classification variant".into()));
    }
    let (model, mut store) = Model::build::<f64>(cfg)?;
    let pyramid = synth_pyramid::<f64>(&cfg.profile, cfg.input_resolution, SAMPLES, cfg.seed)?;
    let labels = labels(SAMPLES, cfg.num_classes.min(2));
    let mut curve = Vec::with_capacity(steps);
    for _ in 0..steps {
        let (loss, grads, updates) = step_loss(&model, &store, &pyramid, &labels, true)?;
        curve.push(loss);
        for (name, g) in grads {
            let p = store.get(&name)?;
            let next = p.zip_map(&g, |w, d| w - lr * d)?;
            store.set(&name, next)?;
        }
        store.apply_updates(updates)?;
    }
    let (final_loss, _, _) = step_loss(&model, &store, &pyramid, &labels, false)?;
    Ok(TrainResult {
        seed: cfg.seed,
        steps,
        lr,
        curve,
        final_loss,
        target: TARGET_LOSS,
        pass: final_loss < TARGET_LOSS,
    })
}

fn to_text(r: &TrainResult) -> String {
    let mut s = format!("train-toy: {SAMPLES} samples, {} steps, lr {}, seed {}\n", r.steps, r.lr, r.seed);
    for (i, loss) in r.curve.iter().enumerate() {
        if i % CURVE_EVERY == 0 || i + 1 == r.curve.len() {
            s += &format!("step {i:>5}  loss {loss:.6e}\n");
        }
    }
    s += &format!("final loss {:.6e} (target < {:e}): {}\n", r.final_loss, r.target, if r.pass { "PASS" } else { "FAIL" });
    s
}

pub fn run(args: &TrainArgs, out: &mut dyn Write) -> Result<Status, CliError> {
    let started = now_ms();
    let mut cfg = args.common.load_config("mini")?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if !args.lr.is_finite() || args.lr < 0.0 {
        return Err(CliError::Usage(format!("learning rate must be finite and non-negative, got {}", args.lr)));
    }
    if cfg.variant != Variant::Classification {
        return Err(CliError::Usage("train-toy needs a classification config".into()));
    }
    let result = train(&cfg, args.steps, args.lr)?;
    let text = match args.common.format {
        Format::Text => to_text(&result),
        Format::Structured => serde_json::to_string_pretty(&result).expect("serializes") + "\n",
    };
    let manifest = RunManifest::new("train-toy", config::hash(&cfg), cfg.seed, started);
    emit(out, &text, args.common.output.as_deref(), manifest)?;
    Ok(Status::from_pass(result.pass))
}
