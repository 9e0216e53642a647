use std::io::Write;

use clap::Args;
use mscsa_core::autodiff::{param_gradcheck, projection, randomize_params, tape_gradcheck, GradSample};
use mscsa_core::{
    synth_pyramid, ConvSpec, Error, Mode, Model, ModelOutput, MscsaConfig, ParamStore, Result, Session, StagePyramid,
    Tape, Var,
};
use serde::{Deserialize, Serialize};

use crate::config;
use crate::manifest::{now_ms, RunManifest};
use crate::{emit, CliError, CommonArgs, Format, Status};

/// Bound every primitive must meet, independent of `--tolerance`.
pub const PRIMITIVE_TOLERANCE: f64 = 1e-6;
/// Scale of the random parameters the model is certified at.
pub const PARAM_SCALE: f64 = 0.05;
/// Every hardswish input at the certification point keeps at least this
/// distance from a kink, so central differences never straddle one.
pub const KINK_MARGIN: f64 = 1e-3;
/// Parameter draws tried before giving up on finding a kink-free point.
pub const MAX_DRAWS: u64 = 64;
const BATCH: usize = 2;
const WORST_SHOWN: usize = 5;

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Pass iff the worst model-level relative error is below this.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Elements checked per parameter tensor; all when omitted.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Corrupts one analytic gradient element to exercise the failure path.
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrimitiveResult {
    pub name: String,
    pub max_rel_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradcheckResult {
    pub seed: u64,
    pub tolerance: f64,
    pub primitive_tolerance: f64,
    pub primitives: Vec<PrimitiveResult>,
    /// Index of the parameter draw certified (seeded by `seed + draw`).
    pub draw: u64,
    /// Smallest hardswish-input distance to a kink at that draw.
    pub kink_margin: f64,
    pub tensors: usize,
    pub elements: usize,
    pub max_rel_err: f64,
    pub worst: String,
    /// Largest-error elements, worst first.
    pub worst_samples: Vec<GradSample>,
    pub pass: bool,
}

type Build = fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

fn away_from_kinks(dims: &[usize], seed: u64) -> mscsa_core::Tensor<f64> {
    // hardswish is not differentiable at -3 and 3
    projection(dims, seed).map(|v| if (v.abs() - 3.0).abs() < 0.05 { v + 0.2 } else { v })
}

/// Tape primitives with their test inputs.
fn primitive_suite() -> Vec<(&'static str, Vec<mscsa_core::Tensor<f64>>, Build)> {
    let p = projection;
    vec![
        ("add", vec![p(&[3, 4], 1), p(&[3, 4], 2)], |t, v| t.add(v[0], v[1])),
        ("mul", vec![p(&[3, 4], 3), p(&[3, 4], 4)], |t, v| t.mul(v[0], v[1])),
        ("matmul", vec![p(&[3, 5], 5), p(&[5, 2], 6)], |t, v| t.matmul(v[0], v[1])),
        ("bmm", vec![p(&[2, 3, 4], 7), p(&[2, 4, 3], 8)], |t, v| t.bmm(v[0], v[1])),
        ("scale", vec![p(&[3, 4], 29)], |t, v| Ok(t.scale(v[0], -1.7))),
        ("sum", vec![p(&[3, 4], 30)], |t, v| Ok(t.sum(v[0]))),
        ("reshape", vec![p(&[2, 6], 31)], |t, v| t.reshape(v[0], &[3, 4])),
        ("slice", vec![p(&[1, 5, 3, 3], 32)], |t, v| t.slice(v[0], 1, 1, 3)),
        ("transpose", vec![p(&[2, 3, 4], 9)], |t, v| t.transpose_last2(v[0])),
        ("softmax", vec![p(&[2, 3, 5], 10)], |t, v| t.softmax(v[0])),
        ("gelu", vec![p(&[4, 5], 11)], |t, v| Ok(t.gelu(v[0]))),
        ("sigmoid", vec![p(&[4, 5], 12)], |t, v| Ok(t.sigmoid(v[0]))),
        ("hardswish", vec![away_from_kinks(&[4, 5], 13)], |t, v| Ok(t.hardswish(v[0]))),
        ("add_bias", vec![p(&[3, 4], 14), p(&[4], 15)], |t, v| t.add_bias(v[0], v[1])),
        ("concat", vec![p(&[1, 2, 3, 3], 16), p(&[1, 3, 3, 3], 17)], |t, v| t.concat(&[v[0], v[1]], 1)),
        ("split", vec![p(&[1, 5, 3, 3], 18)], |t, v| {
            let parts = t.split(v[0], 1, &[2, 3])?;
            let a = t.scale(parts[0], 2.0);
            t.concat(&[parts[1], a], 1)
        }),
        ("conv2d", vec![p(&[1, 2, 5, 5], 19), p(&[3, 2, 3, 3], 20), p(&[3], 21)], |t, v| {
            t.conv2d(v[0], v[1], Some(v[2]), ConvSpec { kernel: (3, 3), stride: (1, 1), padding: (1, 1), groups: 1 })
        }),
        ("conv2d_depthwise_s2", vec![p(&[1, 3, 7, 6], 22), p(&[3, 1, 3, 3], 23)], |t, v| {
            t.conv2d(v[0], v[1], None, ConvSpec::depthwise(3, 3, 2, 1))
        }),
        ("conv2d_depthwise_s3", vec![p(&[1, 3, 7, 6], 24), p(&[3, 1, 3, 3], 25)], |t, v| {
            t.conv2d(v[0], v[1], None, ConvSpec::depthwise(3, 3, 3, 1))
        }),
        ("adaptive_avg_pool", vec![p(&[1, 2, 7, 5], 26)], |t, v| t.adaptive_avg_pool(v[0], (3, 2))),
        ("upsample_bilinear", vec![p(&[1, 2, 3, 2], 27)], |t, v| t.upsample_bilinear(v[0], (7, 5))),
        ("batch_norm_eval", vec![p(&[2, 3, 4, 4], 33), p(&[3], 34), p(&[3], 35)], |t, v| {
            let mean = projection(&[3], 36).scale(0.1);
            let var = projection(&[3], 37).map(|x| 1.0 + 0.2 * x.abs());
            Ok(t.batch_norm(v[0], v[1], v[2], &mean, &var, Mode::Eval)?.0)
        }),
        ("cross_entropy", vec![p(&[3, 4], 28)], |t, v| t.cross_entropy(v[0], &[0, 3, 1])),
    ]
}

/// Flattens the model output into one vector node.
fn model_output(s: &mut mscsa_core::Session<'_, f64>, out: ModelOutput) -> Result<Var> {
    match out {
        ModelOutput::Logits(v) => Ok(v),
        ModelOutput::Pyramid(maps) => {
            let flat: Vec<Var> = maps
                .iter()
                .map(|&m| {
                    let n = s.tape.value(m).numel();
                    s.tape.reshape(m, &[n])
                })
                .collect::<Result<_>>()?;
            s.tape.concat(&flat, 0)
        }
    }
}

/// First seeded parameter draw whose forward pass keeps every hardswish
/// input at least [`KINK_MARGIN`] from a kink.
fn certification_point(
    model: &Model,
    mut store: ParamStore<f64>,
    pyramid: &StagePyramid<f64>,
    seed: u64,
) -> Result<(ParamStore<f64>, u64, f64)> {
    let mut best = 0.0f64;
    for draw in 0..MAX_DRAWS {
        randomize_params(&mut store, seed.wrapping_add(draw), PARAM_SCALE)?;
        let mut s = Session::new(&store, Mode::Eval);
        model.forward(&mut s, pyramid)?;
        let margin = s.tape.hardswish_kink_margin();
        if margin >= KINK_MARGIN {
            return Ok((store, draw, margin));
        }
        best = best.max(margin);
    }
    Err(Error::Numeric(format!(
        "no parameter draw in {MAX_DRAWS} keeps hardswish inputs {KINK_MARGIN:e} from a kink (best {best:e})"
    )))
}

/// Runs the primitive suite and the full-model parameter check.
pub fn certify(cfg: &MscsaConfig, args: &GradcheckArgs) -> Result<GradcheckResult> {
    let primitives = primitive_suite()
        .into_iter()
        .map(|(name, inputs, build)| {
            let err = tape_gradcheck(&inputs, cfg.seed, build)?;
            Ok(PrimitiveResult { name: name.into(), max_rel_err: err, pass: err < PRIMITIVE_TOLERANCE })
        })
        .collect::<Result<Vec<_>>>()?;

    let (model, store) = Model::build::<f64>(cfg)?;
    let pyramid = synth_pyramid::<f64>(&cfg.profile, cfg.input_resolution, BATCH, cfg.seed)?;
    let (store, draw, kink_margin) = certification_point(&model, store, &pyramid, cfg.seed)?;
    let mut samples = param_gradcheck(&store, args.samples, cfg.seed, |s| {
        let out = model.forward(s, &pyramid)?;
        model_output(s, out)
    })?;
    if args.inject_fault {
        if let Some(first) = samples.first_mut() {
            first.analytic += 1.0 + first.analytic.abs();
        }
    }
    let tensors = store.trainable().count();
    let mut ranked = samples.clone();
    ranked.sort_by(|a, b| b.error().total_cmp(&a.error()));
    ranked.truncate(WORST_SHOWN);
    let (max_rel_err, worst) = samples
        .iter()
        .max_by(|a, b| a.error().total_cmp(&b.error()))
        .map(|w: &GradSample| (w.error(), format!("{}[{}]", w.param, w.index)))
        .unwrap_or_default();
    let pass = max_rel_err < args.tolerance && primitives.iter().all(|p| p.pass);
    Ok(GradcheckResult {
        seed: cfg.seed,
        tolerance: args.tolerance,
        primitive_tolerance: PRIMITIVE_TOLERANCE,
        primitives,
        draw,
        kink_margin,
        tensors,
        elements: samples.len(),
        max_rel_err,
        worst,
        worst_samples: ranked,
        pass,
    })
}

fn to_text(r: &GradcheckResult) -> String {
    let mut s = format!("primitives (tolerance {:e}):\n", r.primitive_tolerance);
    for p in &r.primitives {
        s += &format!("  {:<22} {:.3e}  {}\n", p.name, p.max_rel_err, if p.pass { "ok" } else { "FAIL" });
    }
    s += &format!("certification point: draw {}, hardswish kink margin {:.3e}\n", r.draw, r.kink_margin);
    s += &format!(
        "model: {} tensors, {} elements, max rel err {:.3e} at {} (tolerance {:e})\n",
        r.tensors, r.elements, r.max_rel_err, r.worst, r.tolerance
    );
    for w in &r.worst_samples {
        s += &format!(
            "  {}[{}]  analytic {:+.6e}  numeric {:+.6e}  rel {:.3e}\n",
            w.param,
            w.index,
            w.analytic,
            w.numeric,
            w.error()
        );
    }
    s += if r.pass { "gradcheck: PASS\n" } else { "gradcheck: FAIL\n" };
    s
}

pub fn run(args: &GradcheckArgs, out: &mut dyn Write) -> Result<Status, CliError> {
    let started = now_ms();
    let mut cfg = args.common.load_config("mini")?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.tolerance.is_nan() || args.tolerance < 0.0 {
        return Err(CliError::Usage(format!("tolerance must be non-negative, got {}", args.tolerance)));
    }
    let result = certify(&cfg, args)?;
    let text = match args.common.format {
        Format::Text => to_text(&result),
        Format::Structured => serde_json::to_string_pretty(&result).expect("serializes") + "\n",
    };
    let manifest = RunManifest::new("gradcheck", config::hash(&cfg), cfg.seed, started);
    emit(out, &text, args.common.output.as_deref(), manifest)?;
    Ok(Status::from_pass(result.pass))
}
