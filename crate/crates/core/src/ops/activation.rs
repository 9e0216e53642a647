use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn c<T: Scalar>(v: f64) -> T {
    T::from_float(v)
}

/// `x * clamp(x + 3, 0, 6) / 6`.
pub fn hardswish<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (three, six) = (c::<T>(3.0), c::<T>(6.0));
    x.map(|v| v * (v + three).max(T::zero()).min(six) / six)
}

/// Points where the hardswish derivative is discontinuous.
pub const HARDSWISH_KINKS: [f64; 2] = [-3.0, 3.0];

/// Smallest distance from any element of `x` to a hardswish kink.
pub fn hardswish_kink_distance<T: Scalar>(x: &Tensor<T>) -> f64 {
    x.data()
        .iter()
        .map(|v| HARDSWISH_KINKS.iter().map(|k| (v.as_f64() - k).abs()).fold(f64::INFINITY, f64::min))
        .fold(f64::INFINITY, f64::min)
}

/// Derivative taken from the right at the kinks `x = -3` and `x = 3`.
pub fn hardswish_backward<T: Scalar>(x: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    let (two, three, six) = (c::<T>(2.0), c::<T>(3.0), c::<T>(6.0));
    x.zip_map(grad, |v, g| {
        let d = if v < -three {
            T::zero()
        } else if v < three {
            (two * v + three) / six
        } else {
            T::one()
        };
        d * g
    })
}

/// Exact (erf-based) GELU.
pub fn gelu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let half = c::<T>(0.5);
    let inv_sqrt2 = c::<T>(std::f64::consts::FRAC_1_SQRT_2);
    x.map(|v| half * v * (T::one() + (v * inv_sqrt2).erf()))
}

pub fn gelu_backward<T: Scalar>(x: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    let half = c::<T>(0.5);
    let inv_sqrt2 = c::<T>(std::f64::consts::FRAC_1_SQRT_2);
    let inv_sqrt_2pi = c::<T>(0.5 * std::f64::consts::FRAC_2_SQRT_PI * std::f64::consts::FRAC_1_SQRT_2);
    x.zip_map(grad, |v, g| {
        let cdf = half * (T::one() + (v * inv_sqrt2).erf());
        let pdf = inv_sqrt_2pi * (-half * v * v).exp();
        g * (cdf + v * pdf)
    })
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| {
        if v >= T::zero() {
            T::one() / (T::one() + (-v).exp())
        } else {
            let e = v.exp();
            e / (T::one() + e)
        }
    })
}

/// Uses the saved forward output `y = sigmoid(x)`.
pub fn sigmoid_backward<T: Scalar>(y: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    y.zip_map(grad, |s, g| g * s * (T::one() - s))
}

/// Softmax over the trailing axis with max subtraction.
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.data().iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("softmax input contains NaN".into()));
    }
    let n = *x.dims().last().expect("rank >= 1");
    let mut out = Vec::with_capacity(x.numel());
    for row in x.data().chunks(n) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let start = out.len();
        let mut total = T::zero();
        for &v in row {
            let e = (v - max).exp();
            total = total + e;
            out.push(e);
        }
        out[start..].iter_mut().for_each(|e| *e = *e / total);
    }
    Tensor::new(x.dims(), out)
}

/// Uses the saved forward output `y`: `dx = y * (g - sum(g * y))` per row.
pub fn softmax_rows_backward<T: Scalar>(y: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    let n = *y.dims().last().expect("rank >= 1");
    let mut out = Vec::with_capacity(y.numel());
    for (yr, gr) in y.data().chunks(n).zip(grad.data().chunks(n)) {
        let dot = yr.iter().zip(gr).fold(T::zero(), |s, (&a, &b)| s + a * b);
        out.extend(yr.iter().zip(gr).map(|(&a, &b)| a * (b - dot)));
    }
    Tensor::new(y.dims(), out)
}
