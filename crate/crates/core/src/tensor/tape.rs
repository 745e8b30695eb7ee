use std::sync::atomic::{AtomicU64, Ordering};

use super::ops::{self, ConvDims};
use super::{broadcast_index_map, broadcast_shape, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug, Clone, Copy)]
enum Unary {
    Neg,
    Log,
    Exp,
    Sigmoid,
    Tanh,
    Relu,
}

#[derive(Debug, Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy)]
enum Reduce {
    Sum,
    Mean,
    Max,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    Unary(Unary, usize),
    Binary(Binary, usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Clamp(usize, f64, f64),
    Conv2d {
        input: usize,
        kernel: usize,
        bias: Option<usize>,
    },
    Softmax {
        input: usize,
        axis: usize,
    },
    Reduce {
        kind: Reduce,
        input: usize,
        map: Vec<usize>,
        argmax: Vec<usize>,
    },
    Row {
        input: usize,
        index: usize,
    },
    Stack(Vec<usize>),
    Transpose01(usize),
    Reshape(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of operations. Nodes are appended in evaluation order, so the
/// node list is already a topological order and backward replays it in reverse.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Cotangents produced by [`Tape::backward`], indexed by the leaf [`Var`]s.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; `None` when no path reaches it.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.index).and_then(|g| g.as_deref())
    }

    /// Adds the gradient for `var` (if any) into `tensor`'s accumulator.
    pub fn accumulate_into(&self, var: Var, tensor: &mut Tensor) -> Result<()> {
        match self.get(var) {
            Some(g) => tensor.accumulate_grad(g),
            None => {
                let zeros = vec![0.0; tensor.len()];
                tensor.accumulate_grad(&zeros)
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::Tape(format!(
                "variable {} does not belong to this tape",
                v.index
            )));
        }
        Ok(v.index)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.tape, self.id, "variable from a different tape");
        &self.nodes[v.index].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Records a differentiable leaf holding a copy of `t`'s values.
    pub fn param(&mut self, t: &Tensor) -> Var {
        let value = Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("valid tensor");
        self.push(value, Op::Leaf, true)
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        let value = Tensor::new(t.shape().to_vec(), t.into_data()).expect("valid tensor");
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        let value = Tensor::new(t.shape().to_vec(), t.into_data()).expect("valid tensor");
        self.push(value, Op::Constant, false)
    }

    fn unary(&mut self, kind: Unary, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let x = &self.nodes[ia].value;
        if let Unary::Log = kind {
            if let Some(bad) = x.data().iter().find(|v| !(**v > 0.0)) {
                return Err(Error::Domain {
                    op: "log",
                    reason: format!("argument {bad} is not positive"),
                });
            }
        }
        let f: fn(f64) -> f64 = match kind {
            Unary::Neg => |v| -v,
            Unary::Log => f64::ln,
            Unary::Exp => f64::exp,
            Unary::Sigmoid => sigmoid,
            Unary::Tanh => f64::tanh,
            Unary::Relu => |v| if v > 0.0 { v } else { 0.0 },
        };
        let data = x.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.rg(ia);
        Ok(self.push(value, Op::Unary(kind, ia), rg))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Neg, a)
    }
    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Log, a)
    }
    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Exp, a)
    }
    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, a)
    }
    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Tanh, a)
    }
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Relu, a)
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (xa, xb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let f: fn(f64, f64) -> f64 = match kind {
            Binary::Add => |x, y| x + y,
            Binary::Sub => |x, y| x - y,
            Binary::Mul => |x, y| x * y,
            Binary::Div => |x, y| x / y,
        };
        if let Binary::Div = kind {
            if xb.data().iter().any(|&v| v == 0.0) {
                return Err(Error::Domain {
                    op: "div",
                    reason: "division by zero".into(),
                });
            }
        }
        let value = if xa.shape() == xb.shape() {
            let data = xa.data().iter().zip(xb.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(xa.shape().to_vec(), data)?
        } else {
            let shape = broadcast_shape(xa.shape(), xb.shape()).ok_or_else(|| {
                Error::ShapeMismatch {
                    op: "broadcast",
                    lhs: xa.shape().to_vec(),
                    rhs: xb.shape().to_vec(),
                }
            })?;
            let ma = broadcast_index_map(xa.shape(), &shape);
            let mb = broadcast_index_map(xb.shape(), &shape);
            let (da, db) = (xa.data(), xb.data());
            let data = ma.iter().zip(&mb).map(|(&i, &j)| f(da[i], db[j])).collect();
            Tensor::new(shape, data)?
        };
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(value, Op::Binary(kind, ia, ib), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let ia = self.idx(a)?;
        let x = &self.nodes[ia].value;
        let value = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v * c).collect())?;
        let rg = self.rg(ia);
        Ok(self.push(value, Op::Scale(ia, c), rg))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let ia = self.idx(a)?;
        let x = &self.nodes[ia].value;
        let value = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v + c).collect())?;
        let rg = self.rg(ia);
        Ok(self.push(value, Op::AddScalar(ia), rg))
    }

    /// `c - a`, elementwise.
    pub fn rsub_scalar(&mut self, c: f64, a: Var) -> Result<Var> {
        let n = self.neg(a)?;
        self.add_scalar(n, c)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let ia = self.idx(a)?;
        let x = &self.nodes[ia].value;
        let value = Tensor::new(
            x.shape().to_vec(),
            x.data().iter().map(|v| v.clamp(lo, hi)).collect(),
        )?;
        let rg = self.rg(ia);
        Ok(self.push(value, Op::Clamp(ia, lo, hi), rg))
    }

    /// Same-padded (zero fill) 2D convolution of an `H×W×Cin` input with a
    /// `kh×kw×Cin×Cout` kernel; output is `H×W×Cout`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>) -> Result<Var> {
        let (ii, ik) = (self.idx(input)?, self.idx(kernel)?);
        let ib = bias.map(|b| self.idx(b)).transpose()?;
        let dims = ConvDims::from_shapes(self.nodes[ii].value.shape(), self.nodes[ik].value.shape())?;
        if let Some(ib) = ib {
            if self.nodes[ib].value.len() != dims.cout {
                return Err(Error::ShapeMismatch {
                    op: "conv2d bias",
                    lhs: self.nodes[ik].value.shape().to_vec(),
                    rhs: self.nodes[ib].value.shape().to_vec(),
                });
            }
        }
        let data = ops::conv2d_forward(
            &dims,
            self.nodes[ii].value.data(),
            self.nodes[ik].value.data(),
            ib.map(|b| self.nodes[b].value.data()),
        );
        let value = Tensor::new(vec![dims.h, dims.w, dims.cout], data)?;
        let rg = self.rg(ii) || self.rg(ik) || ib.is_some_and(|b| self.rg(b));
        Ok(self.push(
            value,
            Op::Conv2d {
                input: ii,
                kernel: ik,
                bias: ib,
            },
            rg,
        ))
    }

    /// Softmax along `axis`, computed with max-subtraction.
    pub fn softmax(&mut self, input: Var, axis: usize) -> Result<Var> {
        let ii = self.idx(input)?;
        let x = &self.nodes[ii].value;
        if axis >= x.rank() {
            return Err(Error::InvalidAxis {
                axis,
                rank: x.rank(),
            });
        }
        let data = ops::softmax_forward(x.data(), x.shape(), axis);
        let value = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.rg(ii);
        Ok(self.push(value, Op::Softmax { input: ii, axis }, rg))
    }

    fn reduce(&mut self, kind: Reduce, input: Var, axes: &[usize]) -> Result<Var> {
        let ii = self.idx(input)?;
        let x = &self.nodes[ii].value;
        let (shape, map) = ops::reduction_map(x.shape(), axes)?;
        let n_out: usize = shape.iter().product();
        let mut out = vec![
            match kind {
                Reduce::Max => f64::NEG_INFINITY,
                _ => 0.0,
            };
            n_out
        ];
        let mut argmax = Vec::new();
        match kind {
            Reduce::Sum | Reduce::Mean => {
                for (v, &o) in x.data().iter().zip(&map) {
                    out[o] += v;
                }
                if let Reduce::Mean = kind {
                    let count = (x.len() / n_out.max(1)) as f64;
                    out.iter_mut().for_each(|v| *v /= count);
                }
            }
            Reduce::Max => {
                argmax = vec![usize::MAX; n_out];
                for (i, (v, &o)) in x.data().iter().zip(&map).enumerate() {
                    if argmax[o] == usize::MAX || *v > out[o] {
                        out[o] = *v;
                        argmax[o] = i;
                    }
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        let rg = self.rg(ii);
        Ok(self.push(
            value,
            Op::Reduce {
                kind,
                input: ii,
                map,
                argmax,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, input: Var, axes: &[usize]) -> Result<Var> {
        self.reduce(Reduce::Sum, input, axes)
    }

    pub fn mean(&mut self, input: Var, axes: &[usize]) -> Result<Var> {
        self.reduce(Reduce::Mean, input, axes)
    }

    pub fn max(&mut self, input: Var, axes: &[usize]) -> Result<Var> {
        self.reduce(Reduce::Max, input, axes)
    }

    pub fn sum_all(&mut self, input: Var) -> Result<Var> {
        let rank = self.shape(input).len();
        let axes: Vec<usize> = (0..rank).collect();
        self.sum(input, &axes)
    }

    /// Slab `index` along axis 0, keeping the axis (`[1, ...]`).
    pub fn row(&mut self, input: Var, index: usize) -> Result<Var> {
        let ii = self.idx(input)?;
        let x = &self.nodes[ii].value;
        let rows = *x.shape().first().unwrap_or(&0);
        if index >= rows {
            return Err(Error::InvalidArgument(format!(
                "row {index} out of range for extent {rows}"
            )));
        }
        let stride = x.len() / rows;
        let mut shape = x.shape().to_vec();
        shape[0] = 1;
        let data = x.data()[index * stride..(index + 1) * stride].to_vec();
        let value = Tensor::new(shape, data)?;
        let rg = self.rg(ii);
        Ok(self.push(value, Op::Row { input: ii, index }, rg))
    }

    /// Concatenates tensors along axis 0.
    pub fn stack(&mut self, inputs: &[Var]) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::invalid("stack of zero tensors"));
        }
        let idxs = inputs.iter().map(|&v| self.idx(v)).collect::<Result<Vec<_>>>()?;
        let tail = self.nodes[idxs[0]].value.shape()[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &i in &idxs {
            let s = self.nodes[i].value.shape();
            if s[1..] != tail[..] {
                return Err(Error::ShapeMismatch {
                    op: "stack",
                    lhs: tail.clone(),
                    rhs: s[1..].to_vec(),
                });
            }
            rows += s[0];
            data.extend_from_slice(self.nodes[i].value.data());
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        let value = Tensor::new(shape, data)?;
        let rg = idxs.iter().any(|&i| self.rg(i));
        Ok(self.push(value, Op::Stack(idxs), rg))
    }

    /// Swaps the first two axes.
    pub fn transpose01(&mut self, input: Var) -> Result<Var> {
        let ii = self.idx(input)?;
        let x = &self.nodes[ii].value;
        if x.rank() < 2 {
            return Err(Error::InvalidAxis {
                axis: 1,
                rank: x.rank(),
            });
        }
        let s = x.shape();
        let (a, b) = (s[0], s[1]);
        let inner: usize = s[2..].iter().product();
        let data = transpose01_data(x.data(), a, b, inner);
        let mut shape = s.to_vec();
        shape.swap(0, 1);
        let value = Tensor::new(shape, data)?;
        let rg = self.rg(ii);
        Ok(self.push(value, Op::Transpose01(ii), rg))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let ii = self.idx(input)?;
        let x = &self.nodes[ii].value;
        let value = Tensor::new(x.shape().to_vec(), x.data().to_vec())?.reshape(shape.to_vec())?;
        let rg = self.rg(ii);
        Ok(self.push(value, Op::Reshape(ii), rg))
    }

    /// Reverse-mode sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = self.idx(loss).map_err(|_| {
            Error::Tape("backward called for a value that was never recorded (run forward first)".into())
        })?;
        if self.nodes[root].value.len() != 1 {
            return Err(Error::Tape(format!(
                "backward requires a scalar output, got shape {:?}",
                self.nodes[root].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root] = Some(vec![1.0]);
        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::Unary(kind, a) => {
                if !self.rg(*a) {
                    return;
                }
                let x = self.nodes[*a].value.data();
                let ga = slot(grads, *a, x.len());
                for k in 0..g.len() {
                    ga[k] += g[k]
                        * match kind {
                            Unary::Neg => -1.0,
                            Unary::Log => 1.0 / x[k],
                            Unary::Exp => y[k],
                            Unary::Sigmoid => y[k] * (1.0 - y[k]),
                            Unary::Tanh => 1.0 - y[k] * y[k],
                            Unary::Relu => {
                                if x[k] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                        };
                }
            }
            Op::Binary(kind, a, b) => {
                let (xa, xb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let out_shape = node.value.shape();
                let same = xa.shape() == out_shape && xb.shape() == out_shape;
                let (ma, mb) = if same {
                    (None, None)
                } else {
                    (
                        Some(broadcast_index_map(xa.shape(), out_shape)),
                        Some(broadcast_index_map(xb.shape(), out_shape)),
                    )
                };
                let (da, db) = (xa.data(), xb.data());
                let ia_of = |k: usize| ma.as_ref().map_or(k, |m| m[k]);
                let ib_of = |k: usize| mb.as_ref().map_or(k, |m| m[k]);
                if self.rg(*a) {
                    let ga = slot(grads, *a, da.len());
                    for k in 0..g.len() {
                        let (p, q) = (ia_of(k), ib_of(k));
                        ga[p] += g[k]
                            * match kind {
                                Binary::Add | Binary::Sub => 1.0,
                                Binary::Mul => db[q],
                                Binary::Div => 1.0 / db[q],
                            };
                    }
                }
                if self.rg(*b) {
                    let gb = slot(grads, *b, db.len());
                    for k in 0..g.len() {
                        let (p, q) = (ia_of(k), ib_of(k));
                        gb[q] += g[k]
                            * match kind {
                                Binary::Add => 1.0,
                                Binary::Sub => -1.0,
                                Binary::Mul => da[p],
                                Binary::Div => -da[p] / (db[q] * db[q]),
                            };
                    }
                }
            }
            Op::Scale(a, c) => {
                if self.rg(*a) {
                    let ga = slot(grads, *a, g.len());
                    for (s, v) in ga.iter_mut().zip(g) {
                        *s += v * c;
                    }
                }
            }
            Op::AddScalar(a) => {
                if self.rg(*a) {
                    let ga = slot(grads, *a, g.len());
                    for (s, v) in ga.iter_mut().zip(g) {
                        *s += v;
                    }
                }
            }
            Op::Clamp(a, lo, hi) => {
                if self.rg(*a) {
                    let x = self.nodes[*a].value.data();
                    let ga = slot(grads, *a, g.len());
                    for k in 0..g.len() {
                        if x[k] >= *lo && x[k] <= *hi {
                            ga[k] += g[k];
                        }
                    }
                }
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
            } => {
                let (xi, xk) = (&self.nodes[*input].value, &self.nodes[*kernel].value);
                let dims = ConvDims::from_shapes(xi.shape(), xk.shape()).expect("validated");
                let mut gi = self.rg(*input).then(|| vec![0.0; xi.len()]);
                let mut gk = self.rg(*kernel).then(|| vec![0.0; xk.len()]);
                let mut gb = bias
                    .filter(|b| self.rg(*b))
                    .map(|_| vec![0.0; dims.cout]);
                ops::conv2d_backward(
                    &dims,
                    xi.data(),
                    xk.data(),
                    g,
                    gi.as_deref_mut(),
                    gk.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                if let Some(v) = gi {
                    add_into(slot(grads, *input, v.len()), &v);
                }
                if let Some(v) = gk {
                    add_into(slot(grads, *kernel, v.len()), &v);
                }
                if let (Some(v), Some(b)) = (gb, bias) {
                    add_into(slot(grads, *b, v.len()), &v);
                }
            }
            Op::Softmax { input, axis } => {
                if self.rg(*input) {
                    let shape = node.value.shape();
                    let ga = slot(grads, *input, y.len());
                    ops::softmax_backward(y, g, shape, *axis, ga);
                }
            }
            Op::Reduce {
                kind,
                input,
                map,
                argmax,
            } => {
                if !self.rg(*input) {
                    return;
                }
                let n_in = map.len();
                let ga = slot(grads, *input, n_in);
                match kind {
                    Reduce::Sum => {
                        for (s, &o) in ga.iter_mut().zip(map) {
                            *s += g[o];
                        }
                    }
                    Reduce::Mean => {
                        let count = (n_in / g.len().max(1)) as f64;
                        for (s, &o) in ga.iter_mut().zip(map) {
                            *s += g[o] / count;
                        }
                    }
                    Reduce::Max => {
                        for (o, &src) in argmax.iter().enumerate() {
                            ga[src] += g[o];
                        }
                    }
                }
            }
            Op::Row { input, index } => {
                if self.rg(*input) {
                    let n = self.nodes[*input].value.len();
                    let ga = slot(grads, *input, n);
                    let stride = g.len();
                    add_into(&mut ga[index * stride..(index + 1) * stride], g);
                }
            }
            Op::Stack(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.nodes[p].value.len();
                    if self.rg(p) {
                        add_into(slot(grads, p, n), &g[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            Op::Transpose01(a) => {
                if self.rg(*a) {
                    let s = node.value.shape();
                    let inner: usize = s[2..].iter().product();
                    let back = transpose01_data(g, s[0], s[1], inner);
                    add_into(slot(grads, *a, back.len()), &back);
                }
            }
            Op::Reshape(a) => {
                if self.rg(*a) {
                    add_into(slot(grads, *a, g.len()), g);
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], i: usize, n: usize) -> &mut [f64] {
    grads[i].get_or_insert_with(|| vec![0.0; n])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn transpose01_data(x: &[f64], a: usize, b: usize, inner: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for i in 0..a {
        for j in 0..b {
            let src = (i * b + j) * inner;
            let dst = (j * a + i) * inner;
            out[dst..dst + inner].copy_from_slice(&x[src..src + inner]);
        }
    }
    out
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
