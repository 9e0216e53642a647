//! Acceptance criteria 1-7. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

// `!(a < b)` is deliberate: a NaN measurement must fail its check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::panic::{self, AssertUnwindSafe};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use common::{max_abs_diff, randn, randomize, Map, Oracle};
use mscsa_cli::commands::ablate::AblationRow;
use mscsa_core::analysis::{count_macs, Component};
use mscsa_core::blocks::{downsampled_size, kv_token_count};
use mscsa_core::ops;
use mscsa_core::params::{ParamInit, ParamStore};
use mscsa_core::{
    synth_pyramid, ConvSpec, CostReport, CrossScaleAttention, DownsampleStrategy, FeedForward, IntraFeedForward, Mode,
    Model, MscsaConfig, Scalar, Session, Tensor, Variant,
};
use serde_json::Value;

// criterion 1
const REFERENCE_TOTAL: f64 = 2.3e9;
const GMAC_TOL: f64 = 0.002;
const PERCENT_TOL: f64 = 0.3;
const REPORT_RUNTIME: Duration = Duration::from_secs(1);
// criterion 2
const SIZE_RANGE: std::ops::RangeInclusive<usize> = 3..=64;
// criterion 3
const MODEL_GRAD_TOL: f64 = 1e-4;
const PRIMITIVE_GRAD_TOL: f64 = 1e-6;
const GRADCHECK_RUNTIME: Duration = Duration::from_secs(120);
// criterion 4
const ORACLE_TOL_F32: f64 = 1e-6;
const ORACLE_TOL_F64: f64 = 1e-12;
// criterion 5
const SOFTMAX_ROW_TOL: f64 = 1e-6;
// criterion 6
const TRAIN_TARGET: f64 = 0.01;
const TRAIN_STEPS: usize = 500;
const TRAIN_SAMPLES: usize = 8;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn mscsa(args: &[&str]) -> (Output, Duration) {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_mscsa")).args(args).output().expect("binary runs");
    (out, start.elapsed())
}

fn stdout_json(out: &Output) -> Result<Value, String> {
    serde_json::from_slice(&out.stdout).map_err(|e| {
        format!("unparsable output ({e}); stderr: {}", String::from_utf8_lossy(&out.stderr))
    })
}

fn criterion_1() -> Check {
    let reference = REFERENCE_TOTAL.to_string();
    let (out, elapsed) = mscsa(&[
        "report",
        "--config",
        "pvtv2-b1",
        "--resolution",
        "224",
        "--reference-total",
        &reference,
        "--format",
        "structured",
    ]);
    ensure!(out.status.code() == Some(0), "exit {:?}", out.status.code());
    let report = CostReport::from_json(&String::from_utf8_lossy(&out.stdout)).map_err(|e| e.to_string())?;
    let mut detail = Vec::new();
    for (component, gmac, percent) in
        [(Component::Csa, 0.049, 2.1), (Component::Ffn, 0.081, 3.5), (Component::IntraFfn, 0.030, 1.3)]
    {
        let row = report.component(component).ok_or(format!("{component:?} row missing"))?;
        let got = row.macs_per_instance as f64 / 1e9;
        ensure!((got - gmac).abs() <= GMAC_TOL, "{}: {got:.4}G vs {gmac}G", component.label());
        ensure!(
            (row.percent_per_instance - percent).abs() <= PERCENT_TOL,
            "{}: {:.2}% vs {percent}%",
            component.label(),
            row.percent_per_instance
        );
        detail.push(format!("{} {got:.4}G {:.2}%", component.label(), row.percent_per_instance));
    }
    ensure!(elapsed < REPORT_RUNTIME, "runtime {elapsed:?}");
    Ok(format!("{} in {elapsed:.2?}", detail.join(", ")))
}

fn criterion_2() -> Check {
    let mut pairs = 0;
    for h in SIZE_RANGE {
        for w in SIZE_RANGE {
            let (h1, w1) = ((h - 1) / 2 + 1, (w - 1) / 2 + 1);
            let (h2, w2) = ((h - 1) / 3 + 1, (w - 1) / 3 + 1);
            ensure!((downsampled_size(h, 2), downsampled_size(w, 2)) == (h1, w1), "stride 2 at {h}x{w}");
            ensure!((downsampled_size(h, 3), downsampled_size(w, 3)) == (h2, w2), "stride 3 at {h}x{w}");
            let x = Tensor::<f32>::ones(&[1, 1, h, w]);
            let k = Tensor::<f32>::ones(&[1, 1, 3, 3]);
            for (stride, want) in [(2, (h1, w1)), (3, (h2, w2))] {
                let y = ops::conv2d(&x, &k, None, ConvSpec::depthwise(1, 3, stride, 1)).map_err(|e| e.to_string())?;
                ensure!((y.dims()[2], y.dims()[3]) == want, "conv stride {stride} at {h}x{w}: {:?}", y.dims());
            }
            let tokens = h * w + h1 * w1 + h2 * w2;
            ensure!(kv_token_count(h, w, DownsampleStrategy::ParallelDwConv) == tokens, "token count at {h}x{w}");
            pairs += 1;
        }
    }
    // the attention actually sees that many tokens
    for h in 3..=9 {
        for w in 3..=9 {
            let layer = CrossScaleAttention::new("csa", 2, 1, 1, DownsampleStrategy::ParallelDwConv);
            let mut store = ParamStore::<f32>::new();
            layer.register(&mut store, &mut ParamInit::new(0)).map_err(|e| e.to_string())?;
            let mut s = Session::new(&store, Mode::Eval);
            let x = s.input(randn(&[1, 2, h, w], 1));
            let trace = layer.forward_traced(&mut s, x).map_err(|e| e.to_string())?;
            let want = kv_token_count(h, w, DownsampleStrategy::ParallelDwConv);
            ensure!(trace.tokens == want, "traced tokens {} vs {want} at {h}x{w}", trace.tokens);
            ensure!(s.tape.dims(trace.attention)[2] == want, "attention width at {h}x{w}");
        }
    }
    Ok(format!("{pairs} (h, w) pairs in 3..64 match the floor formulas"))
}

fn criterion_3() -> Check {
    let (out, elapsed) = mscsa(&["gradcheck", "--config", "mini", "--tolerance", "1e-4", "--format", "structured"]);
    let r = stdout_json(&out)?;
    let max = r["max_rel_err"].as_f64().ok_or("max_rel_err missing")?;
    let prim_max = r["primitives"]
        .as_array()
        .ok_or("primitives missing")?
        .iter()
        .filter_map(|p| p["max_rel_err"].as_f64())
        .fold(0.0f64, f64::max);
    ensure!(r["primitives"].as_array().is_some_and(|p| !p.is_empty()), "no primitives checked");
    ensure!(out.status.code() == Some(0), "exit {:?}, max rel err {max:e} at {}", out.status.code(), r["worst"]);
    ensure!(max < MODEL_GRAD_TOL, "model max rel err {max:e}");
    ensure!(prim_max < PRIMITIVE_GRAD_TOL, "primitive max rel err {prim_max:e}");
    ensure!(elapsed < GRADCHECK_RUNTIME, "runtime {elapsed:?}");
    Ok(format!(
        "model max rel err {max:.2e} over {} elements, primitives {prim_max:.2e}, {elapsed:.1?}",
        r["elements"]
    ))
}

fn oracle_tol<T: Scalar>() -> f64 {
    if T::BYTES == 4 {
        ORACLE_TOL_F32
    } else {
        ORACLE_TOL_F64
    }
}

fn oracle_errors<T: Scalar>() -> Result<[f64; 4], String> {
    let e = |e: mscsa_core::Error| e.to_string();
    let mut worst = [0.0f64; 4];
    for strategy in DownsampleStrategy::ALL {
        let layer = CrossScaleAttention::new("csa", 6, 2, 3, strategy);
        let mut store = ParamStore::<T>::new();
        layer.register(&mut store, &mut ParamInit::new(1)).map_err(e)?;
        randomize(&mut store, 2, 0.3);
        let x = randn::<T>(&[2, 6, 7, 5], 3);
        let mut s = Session::new(&store, Mode::Eval);
        let xv = s.input(x.clone());
        let y = layer.forward(&mut s, xv).map_err(e)?;
        let want = Oracle::new(&store).csa(&Map::from_tensor(&x), "csa", 2, 3, strategy).to_tensor();
        worst[0] = worst[0].max(max_abs_diff(s.tape.value(y), &want));
    }

    let ffn = FeedForward::new("ffn", 4, 2.0).map_err(e)?;
    let mut store = ParamStore::<T>::new();
    ffn.register(&mut store, &mut ParamInit::new(4)).map_err(e)?;
    randomize(&mut store, 5, 0.3);
    let x = randn::<T>(&[2, 4, 3, 3], 6);
    let mut s = Session::new(&store, Mode::Eval);
    let xv = s.input(x.clone());
    let y = ffn.forward(&mut s, xv).map_err(e)?;
    worst[1] = max_abs_diff(s.tape.value(y), &Oracle::new(&store).ffn(&Map::from_tensor(&x), "ffn").to_tensor());

    let stages = [2, 4, 6];
    let intra = IntraFeedForward::new("intra", &stages, 2.0).map_err(e)?;
    let mut store = ParamStore::<T>::new();
    intra.register(&mut store, &mut ParamInit::new(7)).map_err(e)?;
    randomize(&mut store, 8, 0.3);
    let x = randn::<T>(&[2, 12, 4, 3], 9);
    let mut s = Session::new(&store, Mode::Eval);
    let xv = s.input(x.clone());
    let y = intra.forward(&mut s, xv).map_err(e)?;
    let want = Oracle::new(&store).intra_ffn(&Map::from_tensor(&x), "intra", &stages).to_tensor();
    worst[2] = max_abs_diff(s.tape.value(y), &want);

    let cfg = MscsaConfig { variant: Variant::Dense, ..MscsaConfig::mini() };
    let (model, mut store) = Model::build::<T>(&cfg).map_err(e)?;
    randomize(&mut store, 10, 0.3);
    let pyramid = synth_pyramid::<T>(&cfg.profile, cfg.input_resolution, 2, 11).map_err(e)?;
    let t = cfg.pooled_size();
    let x = randn::<T>(&[2, model.channels(), t, t], 12);
    let mut s = Session::new(&store, Mode::Eval);
    let xv = s.input(x.clone());
    let stage_vars: Vec<_> = pyramid.stages().iter().map(|st| s.input(st.features.clone())).collect();
    let fused = model.dense_fuse(&mut s, xv, &stage_vars).map_err(e)?;
    let stage_maps: Vec<Map<T>> = pyramid.stages().iter().map(|st| Map::from_tensor(&st.features)).collect();
    let want = Oracle::new(&store).dense_fuse(&Map::from_tensor(&x), &stage_maps, model.squeezed_channels());
    for (&v, want) in fused.iter().zip(&want) {
        worst[3] = worst[3].max(max_abs_diff(s.tape.value(v), &want.to_tensor()));
    }
    Ok(worst)
}

fn criterion_4() -> Check {
    let names = ["csa", "ffn", "intra-ffn", "dense-fuse"];
    let mut detail = Vec::new();
    for (label, errs, tol) in [
        ("f32", oracle_errors::<f32>()?, oracle_tol::<f32>()),
        ("f64", oracle_errors::<f64>()?, oracle_tol::<f64>()),
    ] {
        for (name, err) in names.iter().zip(errs) {
            ensure!(err <= tol, "{name} {label} error {err:e} > {tol:e}");
        }
        let worst = errs.iter().copied().fold(0.0f64, f64::max);
        detail.push(format!("{label} worst {worst:.1e} (tol {tol:e})"));
    }
    Ok(detail.join(", "))
}

fn criterion_5() -> Check {
    let e = |e: mscsa_core::Error| e.to_string();
    // pre-norm residual identity, bit-exact
    let cfg = MscsaConfig { depth: 2, ..MscsaConfig::mini() };
    let model = Model::new(&cfg).map_err(e)?;
    let mut store: ParamStore<f64> = model.init_params(3).map_err(e)?;
    randomize(&mut store, 4, 0.3);
    model.zero_branch_outputs(&mut store).map_err(e)?;
    let t = cfg.pooled_size();
    let x = randn::<f64>(&[2, model.channels(), t, t], 5);
    let mut s = Session::new(&store, Mode::Eval);
    let xv = s.input(x.clone());
    let y = model.stack(&mut s, xv).map_err(e)?;
    ensure!(s.tape.value(y).bit_eq(&x), "zeroed branches are not an exact identity");

    // split / concat round trip
    let parts = ops::split_channels(&x, &[8, 16]).map_err(e)?;
    let back = ops::concat_channels(&parts.iter().collect::<Vec<_>>()).map_err(e)?;
    ensure!(back.bit_eq(&x), "split/concat round trip");

    // softmax row normalization
    let layer = CrossScaleAttention::new("csa", 6, 2, 3, DownsampleStrategy::ParallelDwConv);
    let mut store = ParamStore::<f64>::new();
    layer.register(&mut store, &mut ParamInit::new(6)).map_err(e)?;
    randomize(&mut store, 7, 1.0);
    let mut s = Session::new(&store, Mode::Eval);
    let xv = s.input(randn(&[2, 6, 7, 7], 8));
    let trace = layer.forward_traced(&mut s, xv).map_err(e)?;
    let attn = s.tape.value(trace.attention);
    let row_err = attn
        .data()
        .chunks(trace.tokens)
        .map(|row| (row.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0f64, f64::max);
    ensure!(row_err <= SOFTMAX_ROW_TOL, "softmax row sum off by {row_err:e}");

    // Intra-FFN cross-stage independence
    let stages = [4, 8, 12];
    let intra = IntraFeedForward::new("intra", &stages, 2.0).map_err(e)?;
    let mut store = ParamStore::<f64>::new();
    intra.register(&mut store, &mut ParamInit::new(9)).map_err(e)?;
    randomize(&mut store, 10, 0.3);
    let run = |input: &Tensor<f64>| -> Result<Tensor<f64>, String> {
        let mut s = Session::new(&store, Mode::Eval);
        let xv = s.input(input.clone());
        let y = intra.forward(&mut s, xv).map_err(e)?;
        Ok(s.tape.value(y).clone())
    };
    let x = randn::<f64>(&[1, 24, 5, 5], 11);
    let base = run(&x)?;
    let mut poked = x.clone();
    for i in 4 * 25..12 * 25 {
        poked.data_mut()[i] += 1.0;
    }
    let moved = run(&poked)?;
    let split = |t: &Tensor<f64>| ops::split_channels(t, &stages).map_err(e);
    let (b, m) = (split(&base)?, split(&moved)?);
    ensure!(b[0].bit_eq(&m[0]) && b[2].bit_eq(&m[2]), "perturbing stage 1 leaked into another stage");
    ensure!(!b[1].bit_eq(&m[1]), "perturbing stage 1 did not change it");

    // cost model equals the instrumented loop count and the tape tally
    let mut checked = 0;
    for strategy in DownsampleStrategy::ALL {
        let layer = CrossScaleAttention::new("csa", 6, 2, 3, strategy);
        let mut store = ParamStore::<f64>::new();
        layer.register(&mut store, &mut ParamInit::new(12)).map_err(e)?;
        let x = randn::<f64>(&[2, 6, 7, 5], 13);
        let mut oracle = Oracle::new(&store);
        oracle.csa(&Map::from_tensor(&x), "csa", 2, 3, strategy);
        let mut s = Session::new(&store, Mode::Eval);
        let xv = s.input(x);
        layer.forward(&mut s, xv).map_err(e)?;
        let analytic = count_macs(&layer.layer_spec(), 2, 7, 5);
        ensure!(oracle.macs == analytic && s.tape.macs() == analytic, "{strategy}: MAC counts differ");
        checked += 1;
    }
    let ffn = FeedForward::new("ffn", 4, 2.0).map_err(e)?;
    let mut store = ParamStore::<f64>::new();
    ffn.register(&mut store, &mut ParamInit::new(14)).map_err(e)?;
    let x = randn::<f64>(&[2, 4, 3, 3], 15);
    let mut oracle = Oracle::new(&store);
    oracle.ffn(&Map::from_tensor(&x), "ffn");
    let mut s = Session::new(&store, Mode::Eval);
    let xv = s.input(x);
    ffn.forward(&mut s, xv).map_err(e)?;
    let analytic = count_macs(&ffn.layer_spec(), 2, 3, 3);
    ensure!(oracle.macs == analytic && s.tape.macs() == analytic, "ffn: MAC counts differ");
    checked += 1;

    let intra = IntraFeedForward::new("intra", &[2, 4], 2.0).map_err(e)?;
    let mut store = ParamStore::<f64>::new();
    intra.register(&mut store, &mut ParamInit::new(16)).map_err(e)?;
    let x = randn::<f64>(&[2, 6, 4, 3], 17);
    let mut oracle = Oracle::new(&store);
    oracle.intra_ffn(&Map::from_tensor(&x), "intra", &[2, 4]);
    let mut s = Session::new(&store, Mode::Eval);
    let xv = s.input(x);
    intra.forward(&mut s, xv).map_err(e)?;
    let analytic = count_macs(&intra.layer_spec(), 2, 4, 3);
    ensure!(oracle.macs == analytic && s.tape.macs() == analytic, "intra-ffn: MAC counts differ");
    checked += 1;
    Ok(format!("identity bit-exact, row sums within {row_err:.1e}, {checked} layers MAC-exact"))
}

fn criterion_6() -> Check {
    let (out, _) = mscsa(&["train-toy", "--config", "mini", "--steps", "500", "--lr", "0.05", "--format", "structured"]);
    let r = stdout_json(&out)?;
    let final_loss = r["final_loss"].as_f64().ok_or("final_loss missing")?;
    let curve = r["curve"].as_array().map_or(0, Vec::len);
    ensure!(curve == TRAIN_STEPS, "curve has {curve} points");
    ensure!(
        final_loss < TRAIN_TARGET && out.status.code() == Some(0),
        "final loss {final_loss:.4e} after {TRAIN_STEPS} steps on {TRAIN_SAMPLES} samples (exit {:?})",
        out.status.code()
    );
    Ok(format!("final loss {final_loss:.3e} after {TRAIN_STEPS} steps"))
}

fn criterion_7() -> Check {
    let (out, _) = mscsa(&["ablate", "--config", "mini", "--format", "structured"]);
    ensure!(out.status.code() == Some(0), "exit {:?}", out.status.code());
    let rows: Vec<AblationRow> = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
    let strategies: Vec<_> = rows.iter().map(|r| r.strategy).collect();
    ensure!(strategies == DownsampleStrategy::ALL, "strategies {strategies:?}");
    ensure!(rows.iter().all(|r| r.output_dims == rows[0].output_dims), "output shapes differ");
    let row = |s: DownsampleStrategy| rows.iter().find(|r| r.strategy == s).expect("present");
    let (parallel, avg, single) = (
        row(DownsampleStrategy::ParallelDwConv),
        row(DownsampleStrategy::AvgPool),
        row(DownsampleStrategy::SingleDwConv),
    );
    ensure!(avg.downsample_params == 0, "avg-pool downsample params {}", avg.downsample_params);
    ensure!(avg.downsample_params < parallel.downsample_params, "avg-pool not cheaper than parallel");
    let p = MscsaConfig::mini().pooled_size();
    let p1 = downsampled_size(p, 2);
    ensure!(single.kv_tokens == p * p + p1 * p1, "single-dwconv tokens {}", single.kv_tokens);
    ensure!(
        rows.iter().filter(|r| r.scales == 3).all(|r| single.kv_tokens < r.kv_tokens),
        "single-dwconv token count is not strictly smaller"
    );
    Ok(format!(
        "output {:?} for all four; avg-pool downsample params 0 vs {}; single-dwconv tokens {} vs {}",
        rows[0].output_dims, parallel.downsample_params, single.kv_tokens, parallel.kv_tokens
    ))
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("FLOPs-table reproduction", criterion_1),
        ("resolution-formula conformance", criterion_2),
        ("gradient certification", criterion_3),
        ("oracle equivalence", criterion_4),
        ("structural invariants", criterion_5),
        ("trainability", criterion_6),
        ("ablation harness", criterion_7),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match result {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(why) => {
                println!("criterion {} {name}: FAIL ({why})", i + 1);
                failed.push(i + 1);
            }
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
