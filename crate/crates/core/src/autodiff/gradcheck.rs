use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::session::Session;
use super::tape::{Mode, Tape, Var};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Base central-difference step; the step for element `x_i` is
/// `DEFAULT_STEP * (|x_i| + 1)`.
pub const DEFAULT_STEP: f64 = 1e-4;

/// Denominator floor of [`relative_error`].
pub const REL_ERR_FLOOR: f64 = 1e-8;

/// `|a - g| / max(|a|, |g|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Central-difference gradient of the scalar function `f` at `x`, one
/// element at a time. Intended for 64-bit evaluation.
pub fn finite_diff_grad<T, F>(f: F, x: &Tensor<T>, step: f64) -> Tensor<T>
where
    T: Scalar,
    F: Fn(&Tensor<T>) -> T + Sync,
{
    let indices: Vec<usize> = (0..x.numel()).collect();
    let data = finite_diff_at(f, x, &indices, step);
    Tensor::new(x.dims(), data).expect("same dims")
}

/// Central differences at the listed flat indices only.
///
/// Elements are evaluated in parallel; each evaluation is independent, so
/// the result does not depend on the thread count.
pub fn finite_diff_at<T, F>(f: F, x: &Tensor<T>, indices: &[usize], step: f64) -> Vec<T>
where
    T: Scalar,
    F: Fn(&Tensor<T>) -> T + Sync,
{
    indices
        .par_iter()
        .map(|&i| {
            let x0 = x.data()[i];
            let h = T::from_float(step * (x0.as_f64().abs() + 1.0));
            let mut probe = x.clone();
            probe.data_mut()[i] = x0 + h;
            let up = f(&probe);
            probe.data_mut()[i] = x0 - h;
            let down = f(&probe);
            (up - down) / (h + h)
        })
        .collect()
}

/// `sum(a * b)` with Neumaier compensation. Central differences of large
/// reductions need it: plain summation rounding divided by `2h` can exceed
/// the gradient being measured.
pub fn compensated_dot(a: &[f64], b: &[f64]) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        let term = x * y;
        let t = sum + term;
        carry += if sum.abs() >= term.abs() { (sum - t) + term } else { (term - t) + sum };
        sum = t;
    }
    sum + carry
}

/// Fixed standard-normal projection weights for a scalar test loss.
pub fn projection(dims: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(dims, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Certifies the tape gradient of `sum(build(inputs) * R)` against central
/// differences over every element of every input; `R` is a fixed random
/// projection. Returns the worst relative error.
pub fn tape_gradcheck<F>(inputs: &[Tensor<f64>], seed: u64, build: F) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + Sync,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone(), true)).collect();
    let out = build(&mut tape, &vars)?;
    let r = projection(tape.dims(out), seed);
    let rv = tape.constant(r.clone());
    let prod = tape.mul(out, rv)?;
    let loss = tape.sum(prod);
    let grads = tape.backward(loss)?;

    let loss_at = |xs: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = build(&mut tape, &vars).expect("build succeeded once");
        compensated_dot(tape.value(out).data(), r.data())
    };
    let mut worst: f64 = 0.0;
    for (i, (&v, x)) in vars.iter().zip(inputs).enumerate() {
        let analytic = grads.get_or_zeros(v, x.dims());
        let numeric = finite_diff_grad(
            |probe| {
                let mut xs = inputs.to_vec();
                xs[i] = probe.clone();
                loss_at(&xs)
            },
            x,
            DEFAULT_STEP,
        );
        for (a, g) in analytic.data().iter().zip(numeric.data()) {
            worst = worst.max(relative_error(*a, *g));
        }
    }
    Ok(worst)
}

/// Replaces every tensor with seeded random values that keep batch norm
/// well conditioned: running variance in `[0.5, 1.5)`, running mean and
/// norm scales near 0 and 1, everything else `scale * N(0, 1)`.
pub fn randomize_params(store: &mut ParamStore<f64>, seed: u64, scale: f64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
    let norm_weights: Vec<String> = store
        .iter()
        .filter_map(|(n, _)| n.strip_suffix(".running_var").map(|p| format!("{p}.weight")))
        .collect();
    for name in names {
        let dims = store.get(&name)?.dims().to_vec();
        let value = Tensor::from_fn(&dims, |_| {
            let z: f64 = rng.sample(StandardNormal);
            if name.ends_with(".running_var") {
                rng.random_range(0.5..1.5)
            } else if name.ends_with(".running_mean") {
                0.1 * z
            } else if norm_weights.contains(&name) {
                1.0 + 0.1 * z
            } else {
                scale * z
            }
        });
        store.set(&name, value)?;
    }
    Ok(())
}

/// One certified gradient element.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GradSample {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradSample {
    pub fn error(&self) -> f64 {
        relative_error(self.analytic, self.numeric)
    }
}

/// Compares the eval-mode tape gradient of `sum(forward(store) * R)` with
/// central differences for every trainable parameter. `samples` caps the
/// elements checked per tensor (seeded choice); `None` checks all of them.
pub fn param_gradcheck<F>(
    store: &ParamStore<f64>,
    samples: Option<usize>,
    seed: u64,
    forward: F,
) -> Result<Vec<GradSample>>
where
    F: Fn(&mut Session<'_, f64>) -> Result<Var> + Sync,
{
    let mut s = Session::new(store, Mode::Eval);
    let out = forward(&mut s)?;
    let r = projection(s.tape.dims(out), seed);
    let rv = s.tape.constant(r.clone());
    let prod = s.tape.mul(out, rv)?;
    let loss = s.tape.sum(prod);
    let grads = s.tape.backward(loss)?;
    let analytic = s.param_grads(&grads);

    let loss_of = |store: &ParamStore<f64>| -> f64 {
        let mut s = Session::new(store, Mode::Eval);
        let out = forward(&mut s).expect("forward succeeded once");
        compensated_dot(s.tape.value(out).data(), r.data())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut checked = Vec::new();
    for (name, param) in store.trainable() {
        let n = param.numel();
        let idx: Vec<usize> = match samples {
            Some(k) if k < n => {
                let mut v = index::sample(&mut rng, n, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        let numeric = finite_diff_at(
            |probe| {
                let mut perturbed = store.clone();
                perturbed.set(name, probe.clone()).expect("same dims");
                loss_of(&perturbed)
            },
            param,
            &idx,
            DEFAULT_STEP,
        );
        let a = analytic
            .get(name)
            .ok_or_else(|| Error::Contract(format!("{name} is not used by the forward pass")))?;
        checked.extend(idx.iter().zip(numeric).map(|(&i, g)| GradSample {
            param: name.to_string(),
            index: i,
            analytic: a.data()[i],
            numeric: g,
        }));
    }
    Ok(checked)
}
