//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every primitive applied to its [`Var`]s in execution
//! order. [`Tape::backward`] walks the record in reverse and returns the
//! gradient of a scalar with respect to every node that requires one.
//! Parameters enter the tape through [`Tape::param`]; their gradients are
//! additionally collected per [`ParamId`] so layers can accumulate them.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::kernels::{self, CombineKind, ConvGeom, PoolGeom, PoolKind, ReduceKind};
use crate::param::{Param, ParamId};
use crate::scalar::Real;
use crate::tensor::{numel, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

enum Op<T> {
    Leaf,
    Activation(Activation),
    MatMul { m: usize, k: usize, n: usize },
    Transpose { rows: usize, cols: usize },
    Conv2d { geom: ConvGeom, has_bias: bool },
    Pool2d { kind: PoolKind, geom: PoolGeom, argmax: Vec<usize> },
    Reduce { kind: ReduceKind, outer: usize, len: usize, inner: usize, argmax: Vec<usize> },
    Softmax { outer: usize, len: usize, inner: usize, log: bool },
    Combine { kind: CombineKind },
    Standardize { groups: usize, inner: usize, per_middle: bool, xhat: Vec<T>, inv_std: Vec<T> },
    Reshape,
    Concat { outer: usize, lens: Vec<usize>, inner: usize },
    Pick { cols: usize, index: Vec<usize> },
    Scale(T),
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    inputs: Vec<usize>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Execution record for one forward pass. Single-writer by construction.
pub struct Tape<T: Real = f64> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a recorded value.
#[derive(Clone, Copy)]
pub struct Var<'t, T: Real = f64> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Real> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, inputs: Vec<usize>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = inputs.iter().any(|&i| nodes[i].requires_grad);
        nodes.push(Node { value, op, inputs, requires_grad, param: None });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn push_leaf(&self, value: Tensor<T>, requires_grad: bool, param: Option<ParamId>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op: Op::Leaf, inputs: Vec::new(), requires_grad, param });
        Var { tape: self, id: nodes.len() - 1 }
    }

    /// A constant input: no gradient is computed for it.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_leaf(value, false, None)
    }

    /// An input whose gradient is wanted (e.g. for Grad-CAM or gradient checks).
    pub fn input(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_leaf(value, true, None)
    }

    /// A parameter leaf. Trainable parameters require gradients.
    pub fn param(&self, p: &Param<T>) -> Var<'_, T> {
        self.push_leaf(p.value().clone(), p.is_trainable(), Some(p.id()))
    }

    pub fn value(&self, var: Var<'_, T>) -> Tensor<T> {
        self.nodes.borrow()[var.id].value.clone()
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat<'t>(&'t self, parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let first = parts.first().ok_or_else(|| Error::dim("concat of zero tensors"))?;
        let shape0 = first.shape();
        if axis >= shape0.len() {
            return Err(Error::dim(format!("concat axis {axis} out of range for {shape0:?}")));
        }
        let nodes = self.nodes.borrow();
        let mut lens = Vec::with_capacity(parts.len());
        for p in parts {
            let s = nodes[p.id].value.shape();
            let same_rest = s.len() == shape0.len()
                && s.iter().zip(&shape0).enumerate().all(|(a, (x, y))| a == axis || x == y);
            if !same_rest {
                return Err(Error::dim(format!(
                    "cannot concat {s:?} with {shape0:?} along axis {axis}"
                )));
            }
            lens.push(s[axis]);
        }
        let (outer, _, inner) = kernels::split_axis(&shape0, axis);
        let total: usize = lens.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &len) in parts.iter().zip(&lens) {
                let src = nodes[p.id].value.data();
                data.extend_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
            }
        }
        drop(nodes);
        let mut shape = shape0.clone();
        shape[axis] = total;
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::Concat { outer, lens, inner },
            parts.iter().map(|p| p.id).collect(),
        ))
    }

    /// Gradients of the scalar `loss` with respect to every node on the tape
    /// that requires one. The tape is left intact, so calling this twice
    /// yields the same gradients twice.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        if root.requires_grad {
            grads[loss.id] = Some(vec![T::one()]);
        }
        let mut out: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        let mut params: HashMap<ParamId, Tensor<T>> = HashMap::new();
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            backprop(&nodes, node, &g, &mut grads);
            let g = Tensor::from_parts(node.value.shape().to_vec(), g);
            if let Some(pid) = node.param {
                match params.get_mut(&pid) {
                    Some(acc) => {
                        for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += b;
                        }
                    }
                    None => {
                        params.insert(pid, g.clone());
                    }
                }
            }
            out[id] = Some(g);
        }
        Ok(Gradients { grads: out, params })
    }
}

fn accumulate<T: Real>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], id: usize, g: Vec<T>) {
    if !nodes[id].requires_grad {
        return;
    }
    match grads[id].as_mut() {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        None => grads[id] = Some(g),
    }
}

fn backprop<T: Real>(nodes: &[Node<T>], node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let input = |i: usize| &nodes[node.inputs[i]];
    let wants = |i: usize| nodes[node.inputs[i]].requires_grad;
    match &node.op {
        Op::Leaf => {}
        Op::Activation(kind) => {
            let y = node.value.data();
            let gx = match kind {
                Activation::Relu => y
                    .iter()
                    .zip(g)
                    .map(|(&y, &g)| if y > T::zero() { g } else { T::zero() })
                    .collect(),
                Activation::Sigmoid => y
                    .iter()
                    .zip(g)
                    .map(|(&y, &g)| g * y * (T::one() - y))
                    .collect(),
            };
            accumulate(nodes, grads, node.inputs[0], gx);
        }
        &Op::MatMul { m, k, n } => {
            let a = input(0).value.data();
            let b = input(1).value.data();
            if wants(0) {
                // ga (m×k) = g (m×n) · bᵀ
                let mut ga = vec![T::zero(); m * k];
                T::gemm(m, n, k, T::one(), g, n, 1, b, 1, n, T::zero(), &mut ga, k, 1);
                accumulate(nodes, grads, node.inputs[0], ga);
            }
            if wants(1) {
                // gb (k×n) = aᵀ · g
                let mut gb = vec![T::zero(); k * n];
                T::gemm(k, m, n, T::one(), a, 1, k, g, n, 1, T::zero(), &mut gb, n, 1);
                accumulate(nodes, grads, node.inputs[1], gb);
            }
        }
        &Op::Transpose { rows, cols } => {
            let mut gx = vec![T::zero(); rows * cols];
            for r in 0..rows {
                for c in 0..cols {
                    gx[r * cols + c] = g[c * rows + r];
                }
            }
            accumulate(nodes, grads, node.inputs[0], gx);
        }
        Op::Conv2d { geom, has_bias } => {
            let want = (wants(0), wants(1), *has_bias && wants(2));
            let cg = kernels::conv2d_backward(input(0).value.data(), input(1).value.data(), g, geom, want);
            if let Some(gx) = cg.x {
                accumulate(nodes, grads, node.inputs[0], gx);
            }
            if let Some(gw) = cg.w {
                accumulate(nodes, grads, node.inputs[1], gw);
            }
            if let Some(gb) = cg.b {
                accumulate(nodes, grads, node.inputs[2], gb);
            }
        }
        Op::Pool2d { kind, geom, argmax } => {
            let gx = kernels::pool2d_backward(*kind, input(0).value.len(), geom, argmax, g);
            accumulate(nodes, grads, node.inputs[0], gx);
        }
        Op::Reduce { kind, outer, len, inner, argmax } => {
            let gx = kernels::reduce_axis_backward(*kind, input(0).value.len(), *outer, *len, *inner, argmax, g);
            accumulate(nodes, grads, node.inputs[0], gx);
        }
        &Op::Softmax { outer, len, inner, log } => {
            let gx = kernels::softmax_backward(node.value.data(), g, outer, len, inner, log);
            accumulate(nodes, grads, node.inputs[0], gx);
        }
        Op::Combine { kind } => {
            let (a, b) = (&input(0).value, &input(1).value);
            let (ga, gb) = kernels::combine_backward(
                *kind,
                a.data(),
                a.shape(),
                b.data(),
                b.shape(),
                node.value.shape(),
                g,
            );
            accumulate(nodes, grads, node.inputs[0], ga);
            accumulate(nodes, grads, node.inputs[1], gb);
        }
        Op::Standardize { groups, inner, per_middle, xhat, inv_std } => {
            let gx = kernels::standardize_backward(xhat, inv_std, g, *groups, *inner, *per_middle);
            accumulate(nodes, grads, node.inputs[0], gx);
        }
        Op::Reshape => accumulate(nodes, grads, node.inputs[0], g.to_vec()),
        Op::Concat { outer, lens, inner } => {
            let total: usize = lens.iter().sum();
            let mut start = 0;
            for (i, &len) in lens.iter().enumerate() {
                if wants(i) {
                    let mut gi = Vec::with_capacity(outer * len * inner);
                    for o in 0..*outer {
                        let row = o * total * inner + start * inner;
                        gi.extend_from_slice(&g[row..row + len * inner]);
                    }
                    accumulate(nodes, grads, node.inputs[i], gi);
                }
                start += len;
            }
        }
        Op::Pick { cols, index } => {
            let mut gx = vec![T::zero(); input(0).value.len()];
            for (r, &c) in index.iter().enumerate() {
                gx[r * cols + c] += g[r];
            }
            accumulate(nodes, grads, node.inputs[0], gx);
        }
        &Op::Scale(c) => accumulate(nodes, grads, node.inputs[0], g.iter().map(|&v| v * c).collect()),
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients<T: Real = f64> {
    grads: Vec<Option<Tensor<T>>>,
    params: HashMap<ParamId, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Like [`Gradients::get`] but reports unreachable nodes as an error.
    pub fn wrt(&self, var: Var<'_, T>) -> Result<&Tensor<T>> {
        self.get(var).ok_or_else(|| {
            Error::contract(format!("no gradient recorded for node #{}", var.id))
        })
    }

    /// Summed gradient for a parameter across all of its leaves on the tape.
    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id)
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Tensor<T> {
        self.tape.value(*self)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn with_value<R>(&self, f: impl FnOnce(&Tensor<T>) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn elementwise(self, kind: Activation) -> Self {
        let out = self.with_value(|x| match kind {
            Activation::Relu => x.map(|v| v.max(T::zero())),
            Activation::Sigmoid => x.map(|v| T::one() / (T::one() + (-v).exp())),
        });
        self.tape.push(out, Op::Activation(kind), vec![self.id])
    }

    pub fn relu(self) -> Self {
        self.elementwise(Activation::Relu)
    }

    pub fn sigmoid(self) -> Self {
        self.elementwise(Activation::Sigmoid)
    }

    pub fn scale(self, c: T) -> Self {
        let out = self.with_value(|x| x.map(|v| v * c));
        self.tape.push(out, Op::Scale(c), vec![self.id])
    }

    /// Product of two rank-2 tensors.
    pub fn matmul(self, rhs: Self) -> Result<Self> {
        let nodes = self.tape.nodes.borrow();
        let (a, b) = (&nodes[self.id].value, &nodes[rhs.id].value);
        if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(Error::dim(format!(
                "matmul of {:?} and {:?}: inner extents must agree on rank-2 operands",
                a.shape(),
                b.shape()
            )));
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut c = vec![T::zero(); m * n];
        T::gemm(m, k, n, T::one(), a.data(), k, 1, b.data(), n, 1, T::zero(), &mut c, n, 1);
        drop(nodes);
        Ok(self.tape.push(Tensor::from_parts(vec![m, n], c), Op::MatMul { m, k, n }, vec![self.id, rhs.id]))
    }

    pub fn transpose(self) -> Result<Self> {
        let out = self.with_value(|x| {
            if x.rank() != 2 {
                return Err(Error::dim(format!("transpose needs rank 2, got {:?}", x.shape())));
            }
            let (rows, cols) = (x.shape()[0], x.shape()[1]);
            let d = x.data();
            let mut t = vec![T::zero(); rows * cols];
            for r in 0..rows {
                for c in 0..cols {
                    t[c * rows + r] = d[r * cols + c];
                }
            }
            Ok((Tensor::from_parts(vec![cols, rows], t), rows, cols))
        })?;
        Ok(self.tape.push(out.0, Op::Transpose { rows: out.1, cols: out.2 }, vec![self.id]))
    }

    /// 2-D convolution with zero padding. `self` is N×C×H×W, `weight` K×C×kh×kw.
    pub fn conv2d(self, weight: Self, bias: Option<Self>, stride: usize, padding: usize) -> Result<Self> {
        let nodes = self.tape.nodes.borrow();
        let (x, w) = (&nodes[self.id].value, &nodes[weight.id].value);
        let geom = ConvGeom::new(x.shape(), w.shape(), stride, padding)?;
        let b = match bias {
            Some(b) => {
                let b = &nodes[b.id].value;
                if b.len() != geom.k {
                    return Err(Error::dim(format!(
                        "conv2d bias of shape {:?} does not match {} output channels",
                        b.shape(),
                        geom.k
                    )));
                }
                Some(b.data())
            }
            None => None,
        };
        let out = kernels::conv2d_forward(x.data(), w.data(), b, &geom);
        drop(nodes);
        let mut inputs = vec![self.id, weight.id];
        inputs.extend(bias.map(|b| b.id));
        Ok(self.tape.push(
            Tensor::from_parts(vec![geom.n, geom.k, geom.oh, geom.ow], out),
            Op::Conv2d { geom, has_bias: bias.is_some() },
            inputs,
        ))
    }

    /// Windowed pooling over the spatial axes of an N×C×H×W tensor.
    pub fn pool2d(self, kind: PoolKind, window: usize, stride: usize, padding: usize) -> Result<Self> {
        let (out, geom, argmax) = self.with_value(|x| -> Result<_> {
            let geom = PoolGeom::new(x.shape(), window, stride, padding)?;
            let (out, argmax) = kernels::pool2d_forward(kind, x.data(), &geom);
            let shape = vec![x.shape()[0], x.shape()[1], geom.oh, geom.ow];
            Ok((Tensor::from_parts(shape, out), geom, argmax))
        })?;
        Ok(self.tape.push(out, Op::Pool2d { kind, geom, argmax }, vec![self.id]))
    }

    fn reduce(self, kind: ReduceKind, shape: &[usize], axis: usize, keep_shape: Vec<usize>) -> Self {
        let (outer, len, inner) = kernels::split_axis(shape, axis);
        let (out, argmax) = self.with_value(|x| kernels::reduce_axis(kind, x.data(), outer, len, inner));
        self.tape.push(
            Tensor::from_parts(keep_shape, out),
            Op::Reduce { kind, outer, len, inner, argmax },
            vec![self.id],
        )
    }

    fn rank4(&self, what: &str) -> Result<Vec<usize>> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(Error::dim(format!("{what} expects N×C×H×W, got {s:?}")));
        }
        Ok(s)
    }

    /// N×C×H×W → N×C×1×1.
    pub fn global_pool(self, kind: PoolKind) -> Result<Self> {
        let s = self.rank4("global_pool")?;
        let flat = [s[0] * s[1], s[2] * s[3]];
        let r = self.reshape(&flat)?;
        Ok(r.reduce(kind.into(), &flat, 1, vec![s[0], s[1], 1, 1]))
    }

    /// N×C×H×W → N×1×H×W.
    pub fn spatial_pool(self, kind: PoolKind) -> Result<Self> {
        let s = self.rank4("spatial_pool")?;
        Ok(self.reduce(kind.into(), &s, 1, vec![s[0], 1, s[2], s[3]]))
    }

    /// Sum along `axis`, keeping it with extent 1.
    pub fn sum_axis(self, axis: usize) -> Result<Self> {
        let s = self.shape();
        if axis >= s.len() {
            return Err(Error::dim(format!("axis {axis} out of range for {s:?}")));
        }
        let mut keep = s.clone();
        keep[axis] = 1;
        Ok(self.reduce(ReduceKind::Sum, &s, axis, keep))
    }

    /// Sum of all elements, as a shape-`[1]` tensor.
    pub fn sum(self) -> Self {
        let s = self.shape();
        let n = numel(&s);
        self.reduce(ReduceKind::Sum, &[1, n, 1], 1, vec![1])
    }

    pub fn mean(self) -> Self {
        let s = self.shape();
        let n = numel(&s);
        self.reduce(ReduceKind::Mean, &[1, n, 1], 1, vec![1])
    }

    fn softmax_impl(self, axis: usize, log: bool) -> Result<Self> {
        let s = self.shape();
        if axis >= s.len() {
            return Err(Error::dim(format!("softmax axis {axis} out of range for {s:?}")));
        }
        let (outer, len, inner) = kernels::split_axis(&s, axis);
        let out = self.with_value(|x| kernels::softmax_forward(x.data(), outer, len, inner, log));
        Ok(self.tape.push(
            Tensor::from_parts(s, out),
            Op::Softmax { outer, len, inner, log },
            vec![self.id],
        ))
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(self, axis: usize) -> Result<Self> {
        self.softmax_impl(axis, false)
    }

    pub fn log_softmax(self, axis: usize) -> Result<Self> {
        self.softmax_impl(axis, true)
    }

    /// Elementwise add or multiply with right-aligned broadcasting.
    pub fn combine(self, kind: CombineKind, rhs: Self) -> Result<Self> {
        let nodes = self.tape.nodes.borrow();
        let (a, b) = (&nodes[self.id].value, &nodes[rhs.id].value);
        let shape = kernels::broadcast_shape(a.shape(), b.shape())?;
        let out = kernels::combine_forward(kind, a.data(), a.shape(), b.data(), b.shape(), &shape);
        drop(nodes);
        Ok(self.tape.push(Tensor::from_parts(shape, out), Op::Combine { kind }, vec![self.id, rhs.id]))
    }

    pub fn add(self, rhs: Self) -> Result<Self> {
        self.combine(CombineKind::Add, rhs)
    }

    pub fn mul(self, rhs: Self) -> Result<Self> {
        self.combine(CombineKind::Mul, rhs)
    }

    /// Zero-mean, unit-variance along the last axis (no affine part).
    pub fn layer_norm(self, eps: T) -> Self {
        let s = self.shape();
        let inner = *s.last().expect("rank >= 1");
        let outer = numel(&s) / inner;
        let st = self.with_value(|x| kernels::standardize(x.data(), outer, 1, inner, false, eps));
        self.tape.push(
            Tensor::from_parts(s, st.xhat.clone()),
            Op::Standardize { groups: 1, inner, per_middle: false, xhat: st.xhat, inv_std: st.inv_std },
            vec![self.id],
        )
    }

    /// Per-channel standardization of N×C×… over every axis but 1, using the
    /// batch's own statistics. Returns `(output, mean, biased variance)`.
    pub fn channel_standardize(self, eps: T) -> Result<(Self, Vec<T>, Vec<T>)> {
        let s = self.shape();
        if s.len() < 2 {
            return Err(Error::dim(format!("channel_standardize expects N×C×…, got {s:?}")));
        }
        let (outer, groups, inner) = kernels::split_axis(&s, 1);
        let st = self.with_value(|x| kernels::standardize(x.data(), outer, groups, inner, true, eps));
        let v = self.tape.push(
            Tensor::from_parts(s, st.xhat.clone()),
            Op::Standardize { groups, inner, per_middle: true, xhat: st.xhat, inv_std: st.inv_std },
            vec![self.id],
        );
        Ok((v, st.mean, st.var))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        let out = self.with_value(|x| x.reshape(shape))?;
        Ok(self.tape.push(out, Op::Reshape, vec![self.id]))
    }

    /// Selects `x[r, index[r]]` from an N×K tensor, giving N×1.
    pub fn pick(self, index: &[usize]) -> Result<Self> {
        let out = self.with_value(|x| -> Result<_> {
            let s = x.shape();
            if s.len() != 2 || s[0] != index.len() {
                return Err(Error::dim(format!(
                    "pick expects an N×K tensor with N = {}, got {s:?}",
                    index.len()
                )));
            }
            let cols = s[1];
            let mut v = Vec::with_capacity(index.len());
            for (r, &c) in index.iter().enumerate() {
                if c >= cols {
                    return Err(Error::contract(format!("index {c} out of range for {cols} columns")));
                }
                v.push(x.data()[r * cols + c]);
            }
            Ok((Tensor::from_parts(vec![index.len(), 1], v), cols))
        })?;
        Ok(self.tape.push(out.0, Op::Pick { cols: out.1, index: index.to_vec() }, vec![self.id]))
    }
}
