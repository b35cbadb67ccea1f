//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as a node holding its output value
//! and whatever the backward rule needs. Nodes only reference earlier
//! nodes, so the tape order is already a topological order and
//! [`Graph::backward`] walks it once in reverse.

mod kernels;

use crate::error::{Error, Result};
use crate::tensor::{inverse_axes, numel_of, permute_data, permuted_shape, strides_of, Scalar, Tensor};

pub(crate) use kernels::reflect_index;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBroadcast(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Square(Var),
    Sqrt(Var),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    ReflectPad {
        input: Var,
        axis: usize,
    },
    Roll {
        input: Var,
        axis: usize,
        shift: isize,
    },
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        dims: kernels::ConvDims,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    MatMul {
        a: Var,
        b: Var,
        transpose_b: bool,
    },
    LayerNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu(Var),
    LeakyRelu(Var, T),
    Softmax(Var),
    IndexSelect {
        table: Var,
        indices: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Operation tape plus the values it produced.
#[derive(Debug)]
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    backward_done: bool,
    fault: Option<&'static str>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
            fault: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf; it receives a gradient iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let needs_grad = t.requires_grad();
        self.push_node(t, Op::Leaf, needs_grad)
    }

    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push_node(t, Op::Leaf, true)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push_node(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Tensor::new(self.shape(v).to_vec(), g.clone()).ok()
    }

    fn push_node(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(format!(
                "{} produced a non-finite value",
                op_name(&op)
            )));
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push_node(value, op, needs_grad))
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn unary(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Result<Var> {
        let out = self.value(a).map(f);
        self.push(out, op, &[a])
    }

    fn binary(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var> {
        self.same_shape(a, b, op_name(&op))?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(out, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// `a + b` where `b` has the same rank as `a` and every extent of `b`
    /// is either equal to `a`'s or 1.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let map = broadcast_map(self.shape(a), self.shape(b))?;
        let bd = self.data(b);
        let data = self.data(a).iter().zip(&map).map(|(&x, &j)| x + bd[j]).collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(out, Op::AddBroadcast(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Result<Var> {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if self.data(a).iter().any(|&x| x <= T::zero()) {
            return Err(Error::invalid("sqrt of a non-positive value"));
        }
        self.unary(a, Op::Sqrt(a), |x| x.sqrt())
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Abs(a), |x| x.abs())
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Gelu(a), kernels::gelu)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Result<Var> {
        self.unary(
            a,
            Op::LeakyRelu(a, slope),
            |x| if x >= T::zero() { x } else { x * slope },
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = T::of(kernels::compensated_sum(self.data(a)));
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel() as f64;
        let s = kernels::compensated_sum(self.data(a));
        self.push(Tensor::scalar(T::of(s / n)), Op::Mean(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape.to_vec())?;
        self.push(out, Op::Reshape(a), &[a])
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let out = self.value(a).permute(axes)?;
        self.push(out, Op::Permute(a, axes.to_vec()), &[a])
    }

    /// `len` consecutive entries along `axis` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::shape(format!(
                "slice {start}..{} on axis {axis} of {shape:?}",
                start + len
            )));
        }
        let (outer, inner) = split_axis(&shape, axis);
        let src = self.data(a);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * shape[axis] * inner;
            data.extend_from_slice(&src[base + start * inner..base + (start + len) * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let out = Tensor::new(out_shape, data)?;
        self.push(out, Op::Slice { input: a, axis, start }, &[a])
    }

    /// Extends `axis` by `after` entries mirrored about its last entry.
    pub fn reflect_pad(&mut self, a: Var, axis: usize, after: usize) -> Result<Var> {
        if after == 0 {
            return Ok(a);
        }
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape(format!("pad axis {axis} of {shape:?}")));
        }
        let n = shape[axis];
        let (outer, inner) = split_axis(&shape, axis);
        let src = self.data(a);
        let m = n + after;
        let mut data = Vec::with_capacity(outer * m * inner);
        for o in 0..outer {
            for i in 0..m {
                let s = reflect_index(i, n);
                let base = (o * n + s) * inner;
                data.extend_from_slice(&src[base..base + inner]);
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = m;
        let out = Tensor::new(out_shape, data)?;
        self.push(out, Op::ReflectPad { input: a, axis }, &[a])
    }

    /// Cyclic roll along `axis`: output index `(i + shift) mod n` takes input `i`.
    pub fn roll(&mut self, a: Var, axis: usize, shift: isize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape(format!("roll axis {axis} of {shape:?}")));
        }
        let out = Tensor::new(shape.clone(), roll_data(self.data(a), &shape, axis, shift))?;
        self.push(out, Op::Roll { input: a, axis, shift }, &[a])
    }

    /// Cross-correlation with zero padding. `input` is `[N,Cin,H,W]`,
    /// `weight` is `[Cout,Cin,k,k]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, padding: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(input), self.shape(weight));
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::shape(format!(
                "conv2d expects rank-4 input and weight, got {xs:?} and {ws:?}"
            )));
        }
        if xs[1] != ws[1] {
            return Err(Error::shape(format!(
                "conv2d channel mismatch: input has {} channels, weight expects {}",
                xs[1], ws[1]
            )));
        }
        if ws[2] != ws[3] {
            return Err(Error::shape(format!("conv2d needs a square kernel, got {ws:?}")));
        }
        let k = ws[2];
        let (ho, wo) = (
            (xs[2] + 2 * padding).checked_sub(k - 1).filter(|&v| v > 0),
            (xs[3] + 2 * padding).checked_sub(k - 1).filter(|&v| v > 0),
        );
        let (Some(ho), Some(wo)) = (ho, wo) else {
            return Err(Error::shape(format!(
                "conv2d output extent non-positive for input {xs:?}, kernel {k}, padding {padding}"
            )));
        };
        let dims = kernels::ConvDims {
            n: xs[0],
            cin: xs[1],
            cout: ws[0],
            h: xs[2],
            w: xs[3],
            k,
            pad: padding,
            ho,
            wo,
        };
        if let Some(b) = bias {
            if self.shape(b) != [dims.cout] {
                return Err(Error::shape(format!(
                    "conv2d bias shape {:?}, expected [{}]",
                    self.shape(b),
                    dims.cout
                )));
            }
        }
        let data = kernels::conv2d_forward(self.data(input), self.data(weight), bias.map(|b| self.data(b)), dims);
        let out = Tensor::new(vec![dims.n, dims.cout, ho, wo], data)?;
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                dims,
            },
            &inputs,
        )
    }

    /// `input[..., Din] · weight[Din, Dout] + bias[Dout]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight);
        let din = *xs.last().ok_or_else(|| Error::shape("linear on a scalar"))?;
        if ws.len() != 2 || ws[0] != din {
            return Err(Error::shape(format!("linear: input {xs:?} against weight {ws:?}")));
        }
        let dout = ws[1];
        if let Some(b) = bias {
            if self.shape(b) != [dout] {
                return Err(Error::shape(format!(
                    "linear bias shape {:?}, expected [{dout}]",
                    self.shape(b)
                )));
            }
        }
        let rows = numel_of(&xs) / din;
        let mut data = vec![T::zero(); rows * dout];
        if let Some(b) = bias {
            let bd = self.data(b);
            data.chunks_mut(dout).for_each(|r| r.copy_from_slice(bd));
        }
        kernels::gemm(self.data(input), self.data(weight), rows, din, dout, &mut data);
        let mut out_shape = xs;
        *out_shape.last_mut().unwrap() = dout;
        let out = Tensor::new(out_shape, data)?;
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        self.push(out, Op::Linear { input, weight, bias }, &inputs)
    }

    /// Batched matrix product over identical leading dimensions:
    /// `[..., m, k] · [..., k, n]`, or `[..., m, k] · [..., n, k]ᵀ`.
    pub fn matmul(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (as_, bs) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if as_.len() < 2 || as_.len() != bs.len() || as_[..as_.len() - 2] != bs[..bs.len() - 2] {
            return Err(Error::shape(format!("matmul: incompatible shapes {as_:?} and {bs:?}")));
        }
        let r = as_.len();
        let (m, k) = (as_[r - 2], as_[r - 1]);
        let (kb, n) = if transpose_b {
            (bs[r - 1], bs[r - 2])
        } else {
            (bs[r - 2], bs[r - 1])
        };
        if k != kb {
            return Err(Error::shape(format!("matmul: inner extents {k} and {kb} differ")));
        }
        let batch = numel_of(&as_[..r - 2]);
        let data = kernels::bmm(self.data(a), self.data(b), batch, m, k, n, transpose_b);
        let mut out_shape = as_[..r - 2].to_vec();
        out_shape.extend([m, n]);
        let out = Tensor::new(out_shape, data)?;
        self.push(out, Op::MatMul { a, b, transpose_b }, &[a, b])
    }

    /// Normalizes over the last dimension with population variance.
    pub fn layer_norm(&mut self, input: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let c = *self
            .shape(input)
            .last()
            .ok_or_else(|| Error::shape("layer_norm on a scalar"))?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape(format!(
                "layer_norm affine shapes {:?}/{:?}, expected [{c}]",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let (y, mean, rstd) = kernels::layer_norm_forward(self.data(input), self.data(gamma), self.data(beta), c, eps);
        let out = Tensor::new(self.shape(input).to_vec(), y)?;
        self.push(
            out,
            Op::LayerNorm {
                input,
                gamma,
                beta,
                mean,
                rstd,
            },
            &[input, gamma, beta],
        )
    }

    /// Numerically stable softmax over the last dimension.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let d = *self
            .shape(a)
            .last()
            .ok_or_else(|| Error::shape("softmax on a scalar"))?;
        let y = kernels::softmax_rows(self.data(a), d);
        let out = Tensor::new(self.shape(a).to_vec(), y)?;
        self.push(out, Op::Softmax(a), &[a])
    }

    /// Gathers rows of a `[R, D]` table into a `[indices.len(), D]` tensor.
    pub fn index_select(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let ts = self.shape(table).to_vec();
        if ts.len() != 2 {
            return Err(Error::shape(format!("index_select expects a rank-2 table, got {ts:?}")));
        }
        let (rows, d) = (ts[0], ts[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::shape(format!("index {bad} out of range for {rows} rows")));
        }
        let src = self.data(table);
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let out = Tensor::new(vec![indices.len(), d], data)?;
        self.push(
            out,
            Op::IndexSelect {
                table,
                indices: indices.to_vec(),
            },
            &[table],
        )
    }

    /// Sub-pixel rearrangement `[N, C·r², H, W] → [N, C, H·r, W·r]`.
    pub fn pixel_shuffle(&mut self, a: Var, r: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let [n, c, h, w] = pixel_shuffle_dims(&s, r)?;
        let x = self.reshape(a, &[n, c, r, r, h, w])?;
        let x = self.permute(x, &PIXEL_SHUFFLE_AXES)?;
        self.reshape(x, &[n, c, h * r, w * r])
    }

    /// Inverse of [`Graph::pixel_shuffle`].
    pub fn pixel_unshuffle(&mut self, a: Var, r: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let [n, c, hr, wr] = pixel_unshuffle_dims(&s, r)?;
        let x = self.reshape(a, &[n, c, hr / r, r, wr / r, r])?;
        let x = self.permute(x, &inverse_axes(&PIXEL_SHUFFLE_AXES))?;
        self.reshape(x, &[n, c * r * r, hr / r, wr / r])
    }

    /// Propagates `∂loss/∂node` to every node that needs a gradient.
    /// Makes every `op` node pass a wrong (scaled) gradient to its inputs.
    /// Exists so gradient checks can be shown to catch a broken rule.
    #[doc(hidden)]
    pub fn inject_backward_fault(&mut self, op: &'static str) {
        self.fault = Some(op);
    }

    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Autograd("backward called twice on the same tape".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Autograd(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if self.fault.is_some_and(|f| f == op_name(&self.nodes[i].op)) {
                let bad: Vec<T> = g.iter().map(|&v| v * T::of(1.5)).collect();
                self.backward_node(i, &bad, &mut grads);
            } else {
                self.backward_node(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backward_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                if self.needs(*a) {
                    self.accumulate(grads, *a, g.iter().zip(bd).map(|(&x, &y)| x * y).collect());
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, g.iter().zip(ad).map(|(&x, &y)| x * y).collect());
                }
            }
            Op::AddBroadcast(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                if self.needs(*b) {
                    let map = broadcast_map(self.shape(*a), self.shape(*b)).expect("checked in forward");
                    let mut gb = vec![T::zero(); self.value(*b).numel()];
                    for (&gv, &j) in g.iter().zip(&map) {
                        gb[j] += gv;
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.iter().map(|&v| v * *c).collect()),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.to_vec()),
            Op::Square(a) => {
                let two = T::of(2.0);
                let ad = self.data(*a);
                self.accumulate(grads, *a, g.iter().zip(ad).map(|(&gv, &x)| gv * two * x).collect());
            }
            Op::Sqrt(a) => {
                let half = T::of(0.5);
                self.accumulate(grads, *a, g.iter().zip(out).map(|(&gv, &y)| gv * half / y).collect());
            }
            Op::Abs(a) => {
                let ad = self.data(*a);
                let sign = |x: T| {
                    if x > T::zero() {
                        T::one()
                    } else if x < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    }
                };
                self.accumulate(grads, *a, g.iter().zip(ad).map(|(&gv, &x)| gv * sign(x)).collect());
            }
            Op::Sum(a) => self.accumulate(grads, *a, vec![g[0]; self.value(*a).numel()]),
            Op::Mean(a) => {
                let n = self.value(*a).numel();
                let v = g[0] / T::from_usize(n).unwrap();
                self.accumulate(grads, *a, vec![v; n]);
            }
            Op::Reshape(a) => self.accumulate(grads, *a, g.to_vec()),
            Op::Permute(a, axes) => {
                let inv = inverse_axes(axes);
                let gshape = permuted_shape(self.shape(*a), axes).expect("checked in forward");
                self.accumulate(grads, *a, permute_data(g, &gshape, &inv));
            }
            Op::Slice { input, axis, start } => {
                let shape = self.shape(*input);
                let len = node.value.shape()[*axis];
                let (outer, inner) = split_axis(shape, *axis);
                let mut gi = vec![T::zero(); self.value(*input).numel()];
                for o in 0..outer {
                    let dst = o * shape[*axis] * inner + start * inner;
                    let src = o * len * inner;
                    gi[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                self.accumulate(grads, *input, gi);
            }
            Op::ReflectPad { input, axis } => {
                let shape = self.shape(*input);
                let n = shape[*axis];
                let m = node.value.shape()[*axis];
                let (outer, inner) = split_axis(shape, *axis);
                let mut gi = vec![T::zero(); self.value(*input).numel()];
                for o in 0..outer {
                    for p in 0..m {
                        let s = reflect_index(p, n);
                        let dst = (o * n + s) * inner;
                        let src = (o * m + p) * inner;
                        for q in 0..inner {
                            gi[dst + q] += g[src + q];
                        }
                    }
                }
                self.accumulate(grads, *input, gi);
            }
            Op::Roll { input, axis, shift } => {
                let shape = self.shape(*input);
                self.accumulate(grads, *input, roll_data(g, shape, *axis, -*shift));
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                dims,
            } => {
                let (dx, dw, db) = kernels::conv2d_backward(self.data(*input), self.data(*weight), g, *dims);
                self.accumulate(grads, *input, dx);
                self.accumulate(grads, *weight, dw);
                if let Some(b) = bias {
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Linear { input, weight, bias } => {
                let (din, dout) = {
                    let ws = self.shape(*weight);
                    (ws[0], ws[1])
                };
                let rows = self.value(*input).numel() / din;
                if self.needs(*input) {
                    let mut dx = vec![T::zero(); rows * din];
                    kernels::gemm_strided(
                        rows,
                        dout,
                        din,
                        g,
                        kernels::row_major(dout),
                        self.data(*weight),
                        kernels::transposed(dout),
                        &mut dx,
                    );
                    self.accumulate(grads, *input, dx);
                }
                if self.needs(*weight) {
                    let mut dw = vec![T::zero(); din * dout];
                    kernels::gemm_strided(
                        din,
                        rows,
                        dout,
                        self.data(*input),
                        kernels::transposed(din),
                        g,
                        kernels::row_major(dout),
                        &mut dw,
                    );
                    self.accumulate(grads, *weight, dw);
                }
                if let Some(b) = bias {
                    let mut db = vec![T::zero(); dout];
                    for row in g.chunks(dout) {
                        db.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
                    }
                    self.accumulate(grads, *b, db);
                }
            }
            Op::MatMul { a, b, transpose_b } => {
                let as_ = self.shape(*a);
                let r = as_.len();
                let (m, k) = (as_[r - 2], as_[r - 1]);
                let n = node.value.shape()[r - 1];
                let batch = numel_of(&as_[..r - 2]);
                let (da, db) = kernels::bmm_backward(self.data(*a), self.data(*b), g, batch, m, k, n, *transpose_b);
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::LayerNorm {
                input,
                gamma,
                beta,
                mean,
                rstd,
            } => {
                let c = self.value(*gamma).numel();
                let (dx, dg, db) = kernels::layer_norm_backward(self.data(*input), self.data(*gamma), mean, rstd, g, c);
                self.accumulate(grads, *input, dx);
                self.accumulate(grads, *gamma, dg);
                self.accumulate(grads, *beta, db);
            }
            Op::Gelu(a) => {
                let ad = self.data(*a);
                self.accumulate(
                    grads,
                    *a,
                    g.iter().zip(ad).map(|(&gv, &x)| gv * kernels::gelu_grad(x)).collect(),
                );
            }
            Op::LeakyRelu(a, slope) => {
                let ad = self.data(*a);
                self.accumulate(
                    grads,
                    *a,
                    g.iter()
                        .zip(ad)
                        .map(|(&gv, &x)| if x >= T::zero() { gv } else { gv * *slope })
                        .collect(),
                );
            }
            Op::Softmax(a) => {
                let d = *node.value.shape().last().unwrap();
                self.accumulate(grads, *a, kernels::softmax_rows_backward(out, g, d));
            }
            Op::IndexSelect { table, indices } => {
                let d = self.shape(*table)[1];
                let mut gt = vec![T::zero(); self.value(*table).numel()];
                for (row, &i) in indices.iter().enumerate() {
                    for q in 0..d {
                        gt[i * d + q] += g[row * d + q];
                    }
                }
                self.accumulate(grads, *table, gt);
            }
        }
    }
}

fn op_name<T>(op: &Op<T>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::AddBroadcast(..) => "add_broadcast",
        Op::Scale(..) => "scale",
        Op::AddScalar(..) => "add_scalar",
        Op::Square(..) => "square",
        Op::Sqrt(..) => "sqrt",
        Op::Abs(..) => "abs",
        Op::Sum(..) => "sum",
        Op::Mean(..) => "mean",
        Op::Reshape(..) => "reshape",
        Op::Permute(..) => "permute",
        Op::Slice { .. } => "slice",
        Op::ReflectPad { .. } => "reflect_pad",
        Op::Roll { .. } => "roll",
        Op::Conv2d { .. } => "conv2d",
        Op::Linear { .. } => "linear",
        Op::MatMul { .. } => "matmul",
        Op::LayerNorm { .. } => "layer_norm",
        Op::Gelu(..) => "gelu",
        Op::LeakyRelu(..) => "leaky_relu",
        Op::Softmax(..) => "softmax",
        Op::IndexSelect { .. } => "index_select",
    }
}

/// `(product of extents before axis, product after axis)`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize) {
    (numel_of(&shape[..axis]), numel_of(&shape[axis + 1..]))
}

/// For each flat index of `a_shape`, the flat index of the broadcast operand.
fn broadcast_map(a_shape: &[usize], b_shape: &[usize]) -> Result<Vec<usize>> {
    if a_shape.len() != b_shape.len() || a_shape.iter().zip(b_shape).any(|(&a, &b)| b != a && b != 1) {
        return Err(Error::shape(format!("cannot broadcast {b_shape:?} to {a_shape:?}")));
    }
    let bs = strides_of(b_shape);
    let eff: Vec<usize> = b_shape
        .iter()
        .zip(&bs)
        .map(|(&d, &s)| if d == 1 { 0 } else { s })
        .collect();
    let n = numel_of(a_shape);
    let rank = a_shape.len();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        map.push(off);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += eff[ax];
            if idx[ax] < a_shape[ax] {
                break;
            }
            off -= eff[ax] * a_shape[ax];
            idx[ax] = 0;
        }
    }
    Ok(map)
}

pub(crate) fn roll_data<T: Copy>(src: &[T], shape: &[usize], axis: usize, shift: isize) -> Vec<T> {
    let n = shape[axis];
    let (outer, inner) = split_axis(shape, axis);
    let s = shift.rem_euclid(n as isize) as usize;
    let mut out = src.to_vec();
    for o in 0..outer {
        let base = o * n * inner;
        for i in 0..n {
            let d = (i + s) % n;
            out[base + d * inner..base + (d + 1) * inner]
                .copy_from_slice(&src[base + i * inner..base + (i + 1) * inner]);
        }
    }
    out
}

pub(crate) const PIXEL_SHUFFLE_AXES: [usize; 6] = [0, 1, 4, 2, 5, 3];

pub(crate) fn pixel_shuffle_dims(s: &[usize], r: usize) -> Result<[usize; 4]> {
    if s.len() != 4 || r == 0 || !s[1].is_multiple_of(r * r) {
        return Err(Error::shape(format!(
            "pixel_shuffle: channel count of {s:?} not divisible by r²={}",
            r * r
        )));
    }
    Ok([s[0], s[1] / (r * r), s[2], s[3]])
}

pub(crate) fn pixel_unshuffle_dims(s: &[usize], r: usize) -> Result<[usize; 4]> {
    if s.len() != 4 || r == 0 || !s[2].is_multiple_of(r) || !s[3].is_multiple_of(r) {
        return Err(Error::shape(format!(
            "pixel_unshuffle: spatial extents of {s:?} not divisible by {r}"
        )));
    }
    Ok([s[0], s[1], s[2], s[3]])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 7.0]));
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn square_gradient_is_twice_input() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        let sq = g.square(x).unwrap();
        let s = g.sum(sq).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn gradients_accumulate_across_uses() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        let y = g.add(x, x).unwrap();
        let z = g.mul(y, x).unwrap(); // 2x²
        let s = g.sum(z).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[4.0, 8.0]);
    }

    #[test]
    fn backward_twice_is_an_error() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[1], &[1.0]));
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(Error::Autograd(_))));
    }

    #[test]
    fn backward_on_non_scalar_is_an_error() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::Autograd(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[1], &[3.0]));
        let c = g.constant(t(&[1], &[2.0]));
        let y = g.mul(x, c).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0]);
        assert!(g.grad(c).is_none());
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1], &[f64::MAX]));
        assert!(matches!(g.scale(x, 10.0), Err(Error::NonFinite(_))));
    }

    #[test]
    fn broadcast_add_and_reduce() {
        let mut g = Graph::<f64>::new();
        let a = g.param(t(&[2, 3], &[0.0; 6]));
        let b = g.param(t(&[1, 3], &[1.0, 2.0, 3.0]));
        let c = g.add_broadcast(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        let s = g.sum(c).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(b).unwrap().data(), &[2.0, 2.0, 2.0]);
        assert!(g.add_broadcast(a, b).is_ok());
        let bad = g.constant(t(&[2, 1, 1], &[0.0, 0.0]));
        assert!(g.add_broadcast(a, bad).is_err());
    }

    #[test]
    fn roll_then_inverse_roll_is_identity() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn([3, 4], |i| i as f64).unwrap());
        let r = g.roll(x, 1, -1).unwrap();
        assert_eq!(&g.value(r).data()[..4], &[1.0, 2.0, 3.0, 0.0]);
        let back = g.roll(r, 1, 1).unwrap();
        assert_eq!(g.value(back), g.value(x));
    }

    #[test]
    fn slice_and_reflect_pad() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1, 3], &[1.0, 2.0, 3.0]));
        let p = g.reflect_pad(x, 1, 2).unwrap();
        assert_eq!(g.value(p).data(), &[1.0, 2.0, 3.0, 2.0, 1.0]);
        let c = g.slice(p, 1, 0, 3).unwrap();
        assert_eq!(g.value(c), g.value(x));
        assert!(g.slice(x, 1, 2, 2).is_err());
    }
}
