use crate::error::{Error, Result};
use crate::ops::{self, BatchNormState};
use crate::scalar::Scalar;
use crate::tensor::{ConvSpec, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Batch-norm statistics source.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics; the layer is a fixed per-channel affine map.
    Eval,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    MatMul(Var, Var),
    Bmm(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Conv2d { input: Var, weight: Var, bias: Option<Var>, spec: ConvSpec },
    AvgPool(Var),
    Upsample(Var),
    BatchNorm { input: Var, gamma: Var, beta: Var, normalized: Tensor<T>, inv_std: Vec<T>, mode: Mode },
    Hardswish(Var),
    Gelu(Var),
    Sigmoid(Var),
    Softmax(Var),
    AddBias(Var, Var),
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Tensor<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records operations in execution order for reverse-mode differentiation.
///
/// Every op's inputs are recorded before it, so the recording order is a
/// topological order and `backward` walks it once in reverse.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    macs: u64,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Updated batch-norm `(running_mean, running_var)`.
pub type RunningStats<T> = (Tensor<T>, Tensor<T>);

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `dims` when `v` did not reach the loss.
    pub fn get_or_zeros(&self, v: Var, dims: &[usize]) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(dims))
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), macs: 0 }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Multiply-accumulates executed by the conv / matmul ops recorded so far.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.dims()
    }

    /// A leaf; `requires_grad` marks trainable parameters and inputs under test.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).mul(self.value(b))?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let value = self.value(a).scale(s);
        self.push(value, Op::Scale(a, s), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a), &[a])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = ops::matmul(self.value(a), self.value(b))?;
        let (m, k) = self.value(a).matrix_dims()?;
        self.macs += (m * k * value.dims()[1]) as u64;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = ops::bmm(self.value(a), self.value(b))?;
        let d = self.dims(a);
        self.macs += (d[0] * d[1] * d[2] * value.dims()[2]) as u64;
        Ok(self.push(value, Op::Bmm(a, b), &[a, b]))
    }

    pub fn transpose_last2(&mut self, a: Var) -> Result<Var> {
        let value = ops::transpose_last2(self.value(a))?;
        Ok(self.push(value, Op::Transpose(a), &[a]))
    }

    pub fn reshape(&mut self, a: Var, dims: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(dims)?;
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let refs: Vec<_> = inputs.iter().map(|&v| self.value(v)).collect();
        let value = ops::concat(&refs, axis)?;
        Ok(self.push(value, Op::Concat { inputs: inputs.to_vec(), axis }, inputs))
    }

    pub fn slice(&mut self, input: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let value = ops::slice_axis(self.value(input), axis, start, len)?;
        Ok(self.push(value, Op::Slice { input, axis, start }, &[input]))
    }

    /// Splits `input` along `axis` into consecutive pieces.
    pub fn split(&mut self, input: Var, axis: usize, sizes: &[usize]) -> Result<Vec<Var>> {
        let len = *self
            .dims(input)
            .get(axis)
            .ok_or_else(|| Error::shape(format!("axis {axis} out of range")))?;
        let total: usize = sizes.iter().sum();
        if total != len {
            return Err(Error::shape(format!("split sizes {sizes:?} sum to {total}, axis has {len}")));
        }
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &s in sizes {
            out.push(self.slice(input, axis, start, s)?);
            start += s;
        }
        Ok(out)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let value = ops::conv2d(self.value(input), self.value(weight), bias.map(|b| self.value(b)), spec)?;
        let (_, in_c, _, _) = self.value(input).nchw()?;
        let (n, out_c, oh, ow) = value.nchw()?;
        self.macs += (n * oh * ow * out_c * (in_c / spec.groups) * spec.kernel.0 * spec.kernel.1) as u64;
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        Ok(self.push(value, Op::Conv2d { input, weight, bias, spec }, &inputs))
    }

    pub fn adaptive_avg_pool(&mut self, input: Var, target: (usize, usize)) -> Result<Var> {
        let value = ops::adaptive_avg_pool(self.value(input), target)?;
        Ok(self.push(value, Op::AvgPool(input), &[input]))
    }

    pub fn upsample_bilinear(&mut self, input: Var, target: (usize, usize)) -> Result<Var> {
        let value = ops::upsample_bilinear(self.value(input), target)?;
        Ok(self.push(value, Op::Upsample(input), &[input]))
    }

    /// Batch norm with affine parameters `gamma`, `beta` on the tape.
    ///
    /// In train mode the second element holds the updated running
    /// statistics `(mean, var)`.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running_mean: &Tensor<T>,
        running_var: &Tensor<T>,
        mode: Mode,
    ) -> Result<(Var, Option<RunningStats<T>>)> {
        let state = BatchNormState {
            gamma: self.value(gamma).clone(),
            beta: self.value(beta).clone(),
            running_mean: running_mean.clone(),
            running_var: running_var.clone(),
        };
        let (value, normalized, inv_std, updated) = match mode {
            Mode::Train => {
                let out = ops::batch_norm_train(self.value(input), &state)?;
                (out.output, out.normalized, out.inv_std, Some((out.running_mean, out.running_var)))
            }
            Mode::Eval => {
                let (y, xh, istd) = ops::batch_norm_eval(self.value(input), &state)?;
                (y, xh, istd, None)
            }
        };
        let op = Op::BatchNorm { input, gamma, beta, normalized, inv_std, mode };
        Ok((self.push(value, op, &[input, gamma, beta]), updated))
    }

    pub fn hardswish(&mut self, a: Var) -> Var {
        let value = ops::hardswish(self.value(a));
        self.push(value, Op::Hardswish(a), &[a])
    }

    /// Smallest distance from any recorded hardswish input to a kink;
    /// infinite when the tape has no hardswish.
    pub fn hardswish_kink_margin(&self) -> f64 {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Hardswish(a) => Some(ops::hardswish_kink_distance(self.value(a))),
                _ => None,
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = ops::gelu(self.value(a));
        self.push(value, Op::Gelu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = ops::sigmoid(self.value(a));
        self.push(value, Op::Sigmoid(a), &[a])
    }

    /// Softmax over the trailing axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let value = ops::softmax_rows(self.value(a))?;
        Ok(self.push(value, Op::Softmax(a), &[a]))
    }

    /// Adds `bias [K]` to every row of `x [M x K]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, k) = self.value(x).matrix_dims()?;
        if self.dims(bias) != [k] {
            return Err(Error::shape(format!("bias {:?} for rows of width {k}", self.dims(bias))));
        }
        let b = self.value(bias).data().to_vec();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(k) {
            row.iter_mut().zip(&b).for_each(|(v, &bv)| *v = *v + bv);
        }
        let value = Tensor::new(&[m, k], data)?;
        Ok(self.push(value, Op::AddBias(x, bias), &[x, bias]))
    }

    /// Mean softmax cross-entropy; returns a scalar node.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, probs) = ops::cross_entropy(self.value(logits), labels)?;
        let op = Op::CrossEntropy { logits, labels: labels.to_vec(), probs };
        Ok(self.push(Tensor::scalar(loss), op, &[logits]))
    }

    /// Reverse pass from a scalar `loss`, seeded with gradient 1.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, node has dims {:?}",
                self.dims(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::ones(self.dims(loss)));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(grad) = grads[idx].take() else { continue };
            for (var, g) in self.input_grads(node, &grad)? {
                self.accumulate(&mut grads, var, g)?;
            }
            grads[idx] = Some(grad);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
        if !self.nodes[v.0].requires_grad {
            return Ok(());
        }
        let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(self.dims(v)));
        slot.add_assign(&g)
    }

    fn input_grads(&self, node: &Node<T>, grad: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let v = |x: Var| self.value(x);
        Ok(match &node.op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(*a, grad.clone()), (*b, grad.clone())],
            Op::Mul(a, b) => vec![(*a, grad.mul(v(*b))?), (*b, grad.mul(v(*a))?)],
            Op::Scale(a, s) => vec![(*a, grad.scale(*s))],
            Op::Sum(a) => vec![(*a, Tensor::full(self.dims(*a), grad.data()[0]))],
            Op::MatMul(a, b) => {
                let (ga, gb) = ops::matmul_backward(v(*a), v(*b), grad)?;
                vec![(*a, ga), (*b, gb)]
            }
            Op::Bmm(a, b) => {
                let (ga, gb) = ops::bmm_backward(v(*a), v(*b), grad)?;
                vec![(*a, ga), (*b, gb)]
            }
            Op::Transpose(a) => vec![(*a, ops::transpose_last2(grad)?)],
            Op::Reshape(a) => vec![(*a, grad.reshape(self.dims(*a))?)],
            Op::Concat { inputs, axis } => {
                let sizes: Vec<usize> = inputs.iter().map(|&x| self.dims(x)[*axis]).collect();
                inputs.iter().copied().zip(ops::split(grad, *axis, &sizes)?).collect()
            }
            Op::Slice { input, axis, start } => {
                vec![(*input, ops::slice_axis_backward(self.dims(*input), *axis, *start, grad)?)]
            }
            Op::Conv2d { input, weight, bias, spec } => {
                let g = ops::conv2d_backward(v(*input), v(*weight), *spec, grad)?;
                let mut out = vec![(*input, g.input), (*weight, g.weight)];
                out.extend(bias.map(|b| (b, g.bias)));
                out
            }
            Op::AvgPool(a) => vec![(*a, ops::adaptive_avg_pool_backward(self.dims(*a), grad)?)],
            Op::Upsample(a) => vec![(*a, ops::upsample_bilinear_backward(self.dims(*a), grad)?)],
            Op::BatchNorm { input, gamma, beta, normalized, inv_std, mode } => {
                let g = match mode {
                    Mode::Train => ops::batch_norm_train_backward(normalized, inv_std, v(*gamma), grad)?,
                    Mode::Eval => ops::batch_norm_eval_backward(normalized, inv_std, v(*gamma), grad)?,
                };
                vec![(*input, g.input), (*gamma, g.gamma), (*beta, g.beta)]
            }
            Op::Hardswish(a) => vec![(*a, ops::hardswish_backward(v(*a), grad)?)],
            Op::Gelu(a) => vec![(*a, ops::gelu_backward(v(*a), grad)?)],
            Op::Sigmoid(a) => vec![(*a, ops::sigmoid_backward(&node.value, grad)?)],
            Op::Softmax(a) => vec![(*a, ops::softmax_rows_backward(&node.value, grad)?)],
            Op::AddBias(x, b) => {
                let k = self.dims(*b)[0];
                let mut gb = vec![T::zero(); k];
                for row in grad.data().chunks(k) {
                    gb.iter_mut().zip(row).for_each(|(acc, &g)| *acc = *acc + g);
                }
                vec![(*x, grad.clone()), (*b, Tensor::new(&[k], gb)?)]
            }
            Op::CrossEntropy { logits, labels, probs } => {
                vec![(*logits, ops::cross_entropy_backward(probs, labels, grad.data()[0]))]
            }
        })
    }
}
