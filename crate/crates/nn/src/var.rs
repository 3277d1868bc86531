//! Reverse-mode automatic differentiation over a dynamically built graph.
//!
//! A [`Var`] is an immutable node holding its value and the operation that
//! produced it. Backward rules are expressed with the same differentiable
//! operations, so calling [`grad`] with `create_graph = true` yields gradients
//! that can be differentiated again (needed for Jacobian penalties).

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{dim_err, NnError, Result};
use crate::kernels::{self, ConvGeom};
use crate::tensor::Tensor;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static RECORDING: Cell<bool> = const { Cell::new(true) };
}

fn recording() -> bool {
    RECORDING.with(|r| r.get())
}

struct RecordingGuard(bool);

impl RecordingGuard {
    fn set(on: bool) -> Self {
        RecordingGuard(RECORDING.with(|r| r.replace(on)))
    }
}

impl Drop for RecordingGuard {
    fn drop(&mut self) {
        RECORDING.with(|r| r.set(self.0));
    }
}

/// Runs `f` without recording operations: every result is a constant.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let _guard = RecordingGuard::set(false);
    f()
}

#[derive(Clone)]
pub struct Var(Rc<Node>);

struct Node {
    id: u64,
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulConst(Var, Rc<Tensor>),
    Recip(Var),
    Sqrt(Var),
    Exp(Var),
    Elu(Var),
    Sigmoid(Var),
    Relu(Var),
    Abs(Var),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Reshape(Var),
    SumAll(Var),
    Expand(Var),
    SumMid(Var),
    BroadcastMid(Var),
    AddMid(Var, Var),
    MulMid(Var, Var),
    SliceOuter { x: Var, start: usize },
    PadOuter { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    PadCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatOuter(Vec<Var>),
    Conv { x: Var, w: Var, geom: ConvGeom },
    ConvT { g: Var, w: Var, geom: ConvGeom },
    ConvW { x: Var, g: Var, geom: ConvGeom },
}

impl Op {
    fn parents(&self) -> Vec<&Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | AddMid(a, b) | MulMid(a, b) => vec![a, b],
            MatMul { a, b, .. } => vec![a, b],
            Neg(x) | Scale(x, _) | AddScalar(x) | MulConst(x, _) | Recip(x) | Sqrt(x) | Exp(x)
            | Elu(x) | Sigmoid(x) | Relu(x) | Abs(x) | Reshape(x) | SumAll(x) | Expand(x) => {
                vec![x]
            }
            SumMid(x)
            | BroadcastMid(x)
            | SliceOuter { x, .. }
            | PadOuter { x, .. }
            | SliceCols { x, .. }
            | PadCols { x, .. } => vec![x],
            ConcatCols(xs) | ConcatOuter(xs) => xs.iter().collect(),
            Conv { x, w, .. } => vec![x, w],
            ConvT { g, w, .. } => vec![g, w],
            ConvW { x, g, .. } => vec![x, g],
        }
    }
}

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("shape", &self.0.value.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

fn node(value: Tensor, op: Op) -> Var {
    let requires_grad = recording() && op.parents().iter().any(|p| p.requires_grad());
    let op = if requires_grad { op } else { Op::Leaf };
    Var(Rc::new(Node { id: NEXT_ID.fetch_add(1, Ordering::Relaxed), value, requires_grad, op }))
}

/// `f(x[n, c, i], v[c])` for `x[N, C, ...]`.
fn mid_apply(x: &Tensor, v: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    let shape = x.shape();
    if v.ndim() != 1 || shape.len() < 2 || shape[1] != v.numel() {
        return dim_err(format!("cannot apply {:?} along axis 1 of {shape:?}", v.shape()));
    }
    let inner: usize = shape[2..].iter().product();
    let mid = shape[1];
    let vs = v.data();
    let mut out = Vec::with_capacity(x.numel());
    for (i, chunk) in x.data().chunks(inner.max(1)).enumerate() {
        let b = vs[i % mid];
        out.extend(chunk.iter().map(|&a| f(a, b)));
    }
    Ok(Tensor::from_parts(shape.to_vec(), out))
}

/// Elementwise `f(a, b, c)` over three same-shaped tensors.
fn zip3(a: &Tensor, b: &Tensor, c: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).zip(c.data()).map(|((&a, &b), &c)| f(a, b, c)).collect();
    Tensor::from_parts(a.shape().to_vec(), data)
}

fn mask(x: &Tensor, f: impl Fn(f64) -> f64) -> Rc<Tensor> {
    Rc::new(x.map(f))
}

impl Var {
    /// A differentiable leaf (a parameter or an input we take gradients with respect to).
    pub fn leaf(value: Tensor) -> Self {
        Var(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value,
            requires_grad: true,
            op: Op::Leaf,
        }))
    }

    pub fn constant(value: Tensor) -> Self {
        Var(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value,
            requires_grad: false,
            op: Op::Leaf,
        }))
    }

    pub fn value(&self) -> &Tensor {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn detach(&self) -> Var {
        Var::constant(self.0.value.clone())
    }

    fn id(&self) -> u64 {
        self.0.id
    }

    pub fn add(&self, other: &Var) -> Result<Var> {
        let v = self.value().zip_map(other.value(), |a, b| a + b)?;
        Ok(node(v, Op::Add(self.clone(), other.clone())))
    }

    pub fn sub(&self, other: &Var) -> Result<Var> {
        let v = self.value().zip_map(other.value(), |a, b| a - b)?;
        Ok(node(v, Op::Sub(self.clone(), other.clone())))
    }

    pub fn mul(&self, other: &Var) -> Result<Var> {
        let v = self.value().zip_map(other.value(), |a, b| a * b)?;
        Ok(node(v, Op::Mul(self.clone(), other.clone())))
    }

    pub fn div(&self, other: &Var) -> Result<Var> {
        let v = self.value().zip_map(other.value(), |a, b| a / b)?;
        Ok(node(v, Op::Div(self.clone(), other.clone())))
    }

    pub fn neg(&self) -> Var {
        node(self.value().map(|a| -a), Op::Neg(self.clone()))
    }

    pub fn scale(&self, c: f64) -> Var {
        node(self.value().map(|a| a * c), Op::Scale(self.clone(), c))
    }

    pub fn add_scalar(&self, c: f64) -> Var {
        node(self.value().map(|a| a + c), Op::AddScalar(self.clone()))
    }

    /// Elementwise product with a constant tensor (masks, fixed scalings).
    pub fn mul_const(&self, m: &Tensor) -> Result<Var> {
        self.mul_const_rc(Rc::new(m.clone()))
    }

    fn mul_const_rc(&self, m: Rc<Tensor>) -> Result<Var> {
        let v = self.value().zip_map(&m, |a, b| a * b)?;
        Ok(node(v, Op::MulConst(self.clone(), m)))
    }

    pub fn square(&self) -> Var {
        self.mul(self).expect("same shape")
    }

    pub fn recip(&self) -> Var {
        node(self.value().map(|a| 1.0 / a), Op::Recip(self.clone()))
    }

    pub fn sqrt(&self) -> Var {
        node(self.value().map(f64::sqrt), Op::Sqrt(self.clone()))
    }

    pub fn exp(&self) -> Var {
        node(self.value().map(f64::exp), Op::Exp(self.clone()))
    }

    pub fn elu(&self) -> Var {
        node(self.value().map(elu), Op::Elu(self.clone()))
    }

    pub fn sigmoid(&self) -> Var {
        node(self.value().map(sigmoid), Op::Sigmoid(self.clone()))
    }

    pub fn relu(&self) -> Var {
        node(self.value().map(|a| a.max(0.0)), Op::Relu(self.clone()))
    }

    pub fn abs(&self) -> Var {
        node(self.value().map(f64::abs), Op::Abs(self.clone()))
    }

    /// `op(self) · op(other)` for 2-D operands.
    pub fn matmul_t(&self, other: &Var, ta: bool, tb: bool) -> Result<Var> {
        let v = kernels::matmul(self.value(), other.value(), ta, tb)?;
        Ok(node(v, Op::MatMul { a: self.clone(), b: other.clone(), ta, tb }))
    }

    pub fn matmul(&self, other: &Var) -> Result<Var> {
        self.matmul_t(other, false, false)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var> {
        let v = self.value().reshape(shape)?;
        Ok(node(v, Op::Reshape(self.clone())))
    }

    pub fn sum(&self) -> Var {
        node(Tensor::scalar(self.value().sum()), Op::SumAll(self.clone()))
    }

    pub fn mean(&self) -> Var {
        let n = self.value().numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Broadcasts a single-element tensor to `shape`.
    pub fn expand(&self, shape: &[usize]) -> Result<Var> {
        if self.value().numel() != 1 {
            return dim_err(format!("expand needs a scalar, got {:?}", self.shape()));
        }
        let v = Tensor::full(shape, self.value().item());
        Ok(node(v, Op::Expand(self.clone())))
    }

    /// Views the tensor as `[outer, mid, inner]` (`outer` = leading axis,
    /// `mid` = second axis) and sums over `outer` and `inner`, giving `[mid]`.
    pub fn sum_mid(&self) -> Result<Var> {
        let shape = self.shape();
        if shape.len() < 2 {
            return dim_err(format!("sum_mid needs at least 2 axes, got {shape:?}"));
        }
        let mid = shape[1];
        let inner: usize = shape[2..].iter().product();
        let mut out = vec![0.0; mid];
        for (i, chunk) in self.value().data().chunks(inner).enumerate() {
            out[i % mid] += chunk.iter().sum::<f64>();
        }
        Ok(node(Tensor::from_parts(vec![mid], out), Op::SumMid(self.clone())))
    }

    /// Adjoint of [`Var::sum_mid`]: repeats a `[mid]` vector over `shape`.
    pub fn broadcast_mid(&self, shape: &[usize]) -> Result<Var> {
        if self.value().ndim() != 1 || shape.len() < 2 || shape[1] != self.value().numel() {
            return dim_err(format!("cannot broadcast {:?} along axis 1 of {shape:?}", self.shape()));
        }
        let (outer, mid) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        let src = self.value().data();
        let mut out = Vec::with_capacity(outer * mid * inner);
        for _ in 0..outer {
            for &v in src {
                out.extend(std::iter::repeat_n(v, inner));
            }
        }
        Ok(node(Tensor::from_parts(shape.to_vec(), out), Op::BroadcastMid(self.clone())))
    }

    /// Adds `v[C]` along axis 1 of `self[N, C, ...]`.
    pub fn add_mid(&self, v: &Var) -> Result<Var> {
        let out = mid_apply(self.value(), v.value(), |a, b| a + b)?;
        Ok(node(out, Op::AddMid(self.clone(), v.clone())))
    }

    /// Multiplies `self[N, C, ...]` by `v[C]` along axis 1.
    pub fn mul_mid(&self, v: &Var) -> Result<Var> {
        let out = mid_apply(self.value(), v.value(), |a, b| a * b)?;
        Ok(node(out, Op::MulMid(self.clone(), v.clone())))
    }

    /// Rows `[start, start + len)` along the leading axis.
    pub fn slice_outer(&self, start: usize, len: usize) -> Result<Var> {
        let v = self.value().slice_outer(start, len)?;
        Ok(node(v, Op::SliceOuter { x: self.clone(), start }))
    }

    /// Zero-pads along the leading axis so that `self` occupies rows `start..` of `total`.
    pub fn pad_outer(&self, start: usize, total: usize) -> Result<Var> {
        let rows = self.shape()[0];
        if start + rows > total {
            return dim_err(format!("pad_outer: {rows} rows at {start} exceed {total}"));
        }
        let inner = self.value().numel() / rows;
        let mut data = vec![0.0; total * inner];
        data[start * inner..(start + rows) * inner].copy_from_slice(self.value().data());
        let mut shape = self.shape().to_vec();
        shape[0] = total;
        Ok(node(Tensor::from_parts(shape, data), Op::PadOuter { x: self.clone(), start }))
    }

    /// Columns `[start, start + len)` of a 2-D tensor.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.dims2("slice_cols")?;
        if start + len > cols || len == 0 {
            return dim_err(format!("columns {start}..{} out of range for {cols}", start + len));
        }
        let src = self.value().data();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&src[r * cols + start..r * cols + start + len]);
        }
        Ok(node(Tensor::from_parts(vec![rows, len], data), Op::SliceCols { x: self.clone(), start }))
    }

    pub fn pad_cols(&self, start: usize, total: usize) -> Result<Var> {
        let (rows, cols) = self.dims2("pad_cols")?;
        if start + cols > total {
            return dim_err(format!("pad_cols: {cols} columns at {start} exceed {total}"));
        }
        let src = self.value().data();
        let mut data = vec![0.0; rows * total];
        for r in 0..rows {
            data[r * total + start..r * total + start + cols].copy_from_slice(&src[r * cols..(r + 1) * cols]);
        }
        Ok(node(Tensor::from_parts(vec![rows, total], data), Op::PadCols { x: self.clone(), start }))
    }

    /// Horizontal concatenation of 2-D tensors with equal row counts.
    pub fn concat_cols(parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return dim_err("concat_cols of nothing");
        };
        let rows = first.dims2("concat_cols")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, c) = p.dims2("concat_cols")?;
            if r != rows {
                return dim_err(format!("concat_cols: row counts {rows} and {r} differ"));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.value().data()[r * w..(r + 1) * w]);
            }
        }
        Ok(node(Tensor::from_parts(vec![rows, total], data), Op::ConcatCols(parts.to_vec())))
    }

    /// Concatenation along the leading axis.
    pub fn concat_outer(parts: &[Var]) -> Result<Var> {
        let values: Vec<Tensor> = parts.iter().map(|p| p.value().clone()).collect();
        let v = Tensor::concat_outer(&values)?;
        Ok(node(v, Op::ConcatOuter(parts.to_vec())))
    }

    /// Cross-correlation with kernel `w[c_out, c_in, kh, kw]`.
    pub fn conv2d(&self, w: &Var, stride: usize, pad: usize) -> Result<Var> {
        let geom = ConvGeom::forward(self.shape(), w.shape(), stride, pad)?;
        self.conv_with(w, geom)
    }

    /// Transposed convolution, the adjoint of [`Var::conv2d`] with the same kernel
    /// `w[c_in_of_self, c_out, kh, kw]`.
    pub fn conv_transpose2d(&self, w: &Var, stride: usize, pad: usize, output_padding: usize) -> Result<Var> {
        let geom = ConvGeom::transposed(self.shape(), w.shape(), stride, pad, output_padding)?;
        self.conv_t_with(w, geom)
    }

    fn conv_with(&self, w: &Var, geom: ConvGeom) -> Result<Var> {
        let v = kernels::conv2d(&geom, self.value(), w.value())?;
        Ok(node(v, Op::Conv { x: self.clone(), w: w.clone(), geom }))
    }

    fn conv_t_with(&self, w: &Var, geom: ConvGeom) -> Result<Var> {
        let v = kernels::conv2d_input_grad(&geom, self.value(), w.value())?;
        Ok(node(v, Op::ConvT { g: self.clone(), w: w.clone(), geom }))
    }

    fn conv_w_with(x: &Var, g: &Var, geom: ConvGeom) -> Result<Var> {
        let v = kernels::conv2d_weight_grad(&geom, x.value(), g.value())?;
        Ok(node(v, Op::ConvW { x: x.clone(), g: g.clone(), geom }))
    }

    fn dims2(&self, op: &str) -> Result<(usize, usize)> {
        match self.shape() {
            &[r, c] => Ok((r, c)),
            s => dim_err(format!("{op} needs a 2-D tensor, got {s:?}")),
        }
    }

    /// Gradients of this node's inputs given the upstream gradient `g`.
    fn backward(&self, g: &Var, needs: &[bool]) -> Result<Vec<Option<Var>>> {
        use Op::*;
        let out = self;
        let want = |i: usize| needs[i];
        let grads = match &self.0.op {
            Leaf => vec![],
            Add(_, _) => vec![Some(g.clone()), Some(g.clone())],
            Sub(_, _) => vec![Some(g.clone()), if want(1) { Some(g.neg()) } else { None }],
            Mul(a, b) => vec![
                if want(0) { Some(g.mul(b)?) } else { None },
                if want(1) { Some(g.mul(a)?) } else { None },
            ],
            Div(_, b) => vec![
                if want(0) { Some(g.div(b)?) } else { None },
                if want(1) { Some(g.mul(out)?.div(b)?.neg()) } else { None },
            ],
            Neg(_) => vec![Some(g.neg())],
            Scale(_, c) => vec![Some(g.scale(*c))],
            AddScalar(_) => vec![Some(g.clone())],
            MulConst(_, m) => vec![Some(g.mul_const_rc(m.clone())?)],
            Recip(_) => vec![Some(g.mul(out)?.mul(out)?.neg())],
            Sqrt(_) => vec![Some(g.div(out)?.scale(0.5))],
            Exp(_) => vec![Some(g.mul(out)?)],
            Elu(x) if !recording() => {
                let d = zip3(g.value(), x.value(), out.value(), |g, x, y| if x > 0.0 { g } else { g * (y + 1.0) });
                vec![Some(Var::constant(d))]
            }
            Sigmoid(_) if !recording() => {
                vec![Some(Var::constant(g.value().zip_map(out.value(), |g, y| g * (y - y * y))?))]
            }
            Relu(x) if !recording() => {
                vec![Some(Var::constant(g.value().zip_map(x.value(), |g, x| if x > 0.0 { g } else { 0.0 })?))]
            }
            Elu(x) => {
                // elu'(x) = 1 for x > 0, elu(x) + 1 otherwise
                let neg = mask(x.value(), |v| if v > 0.0 { 0.0 } else { 1.0 });
                let slope = out.mul_const_rc(neg)?.add_scalar(1.0);
                vec![Some(g.mul(&slope)?)]
            }
            Sigmoid(_) => {
                let slope = out.sub(&out.square())?;
                vec![Some(g.mul(&slope)?)]
            }
            Relu(x) => vec![Some(g.mul_const_rc(mask(x.value(), |v| if v > 0.0 { 1.0 } else { 0.0 }))?)],
            Abs(x) => vec![Some(g.mul_const_rc(mask(x.value(), |v| {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }))?)],
            MatMul { a, b, ta, tb } => {
                let ga = if !want(0) {
                    None
                } else if !ta {
                    Some(g.matmul_t(b, false, !tb)?)
                } else {
                    Some(b.matmul_t(g, *tb, true)?)
                };
                let gb = if !want(1) {
                    None
                } else if !tb {
                    Some(a.matmul_t(g, !ta, false)?)
                } else {
                    Some(g.matmul_t(a, true, *ta)?)
                };
                vec![ga, gb]
            }
            Reshape(x) => vec![Some(g.reshape(x.shape())?)],
            SumAll(x) => vec![Some(g.expand(x.shape())?)],
            Expand(_) => vec![Some(g.sum())],
            AddMid(_, _) => vec![
                if want(0) { Some(g.clone()) } else { None },
                if want(1) { Some(g.sum_mid()?) } else { None },
            ],
            MulMid(x, v) => vec![
                if want(0) { Some(g.mul_mid(v)?) } else { None },
                if want(1) { Some(g.mul(x)?.sum_mid()?) } else { None },
            ],
            SumMid(x) => vec![Some(g.broadcast_mid(x.shape())?)],
            BroadcastMid(_) => vec![Some(g.sum_mid()?)],
            SliceOuter { x, start } => vec![Some(g.pad_outer(*start, x.shape()[0])?)],
            PadOuter { x, start } => vec![Some(g.slice_outer(*start, x.shape()[0])?)],
            SliceCols { x, start } => vec![Some(g.pad_cols(*start, x.shape()[1])?)],
            PadCols { x, start } => vec![Some(g.slice_cols(*start, x.shape()[1])?)],
            ConcatCols(xs) => {
                let mut offset = 0;
                let mut grads = Vec::with_capacity(xs.len());
                for (i, x) in xs.iter().enumerate() {
                    let width = x.shape()[1];
                    grads.push(if want(i) { Some(g.slice_cols(offset, width)?) } else { None });
                    offset += width;
                }
                grads
            }
            ConcatOuter(xs) => {
                let mut offset = 0;
                let mut grads = Vec::with_capacity(xs.len());
                for (i, x) in xs.iter().enumerate() {
                    let rows = x.shape()[0];
                    grads.push(if want(i) { Some(g.slice_outer(offset, rows)?) } else { None });
                    offset += rows;
                }
                grads
            }
            Conv { x, w, geom } => vec![
                if want(0) { Some(g.conv_t_with(w, *geom)?) } else { None },
                if want(1) { Some(Var::conv_w_with(x, g, *geom)?) } else { None },
            ],
            ConvT { g: gin, w, geom } => vec![
                if want(0) { Some(g.conv_with(w, *geom)?) } else { None },
                if want(1) { Some(Var::conv_w_with(g, gin, *geom)?) } else { None },
            ],
            ConvW { x, g: gin, geom } => vec![
                if want(0) { Some(gin.conv_t_with(g, *geom)?) } else { None },
                if want(1) { Some(x.conv_with(g, *geom)?) } else { None },
            ],
        };
        Ok(grads)
    }
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gradients of the scalar `output` with respect to each of `wrt`.
///
/// Inputs the output does not depend on receive zeros. With `create_graph`
/// the returned gradients are themselves differentiable.
pub fn grad(output: &Var, wrt: &[Var], create_graph: bool) -> Result<Vec<Var>> {
    if output.value().numel() != 1 {
        return Err(NnError::Contract(format!(
            "gradient requested of a non-scalar of shape {:?}",
            output.shape()
        )));
    }
    let order = topo_order(output);
    let wrt_ids: HashSet<u64> = wrt.iter().filter(|w| w.requires_grad()).map(Var::id).collect();

    // Nodes from which some requested input is reachable.
    let mut needed: HashSet<u64> = HashSet::new();
    for v in &order {
        if wrt_ids.contains(&v.id()) || v.0.op.parents().iter().any(|p| needed.contains(&p.id())) {
            needed.insert(v.id());
        }
    }

    let _guard = RecordingGuard::set(create_graph);
    let mut grads: HashMap<u64, Var> = HashMap::new();
    let mut kept: HashMap<u64, Var> = HashMap::new();
    if needed.contains(&output.id()) {
        grads.insert(output.id(), Var::constant(Tensor::ones(output.shape())));
    }
    for v in order.iter().rev() {
        let Some(g) = grads.remove(&v.id()) else { continue };
        if wrt_ids.contains(&v.id()) {
            kept.insert(v.id(), g.clone());
        }
        let parents = v.0.op.parents();
        let needs: Vec<bool> = parents.iter().map(|p| needed.contains(&p.id())).collect();
        if !needs.iter().any(|&n| n) {
            continue;
        }
        for ((p, pg), need) in parents.iter().zip(v.backward(&g, &needs)?).zip(&needs) {
            let (Some(pg), true) = (pg, *need) else { continue };
            let acc = match grads.remove(&p.id()) {
                Some(prev) => prev.add(&pg)?,
                None => pg,
            };
            grads.insert(p.id(), acc);
        }
    }
    Ok(wrt
        .iter()
        .map(|w| kept.remove(&w.id()).unwrap_or_else(|| Var::constant(Tensor::zeros(w.shape()))))
        .collect())
}

/// All grad-requiring nodes reachable from `root`, in creation order.
fn topo_order(root: &Var) -> Vec<Var> {
    let mut seen = HashSet::new();
    let mut stack = vec![root.clone()];
    let mut nodes = Vec::new();
    while let Some(v) = stack.pop() {
        if !v.requires_grad() || !seen.insert(v.id()) {
            continue;
        }
        for p in v.0.op.parents() {
            stack.push(p.clone());
        }
        nodes.push(v);
    }
    // Ids grow monotonically, so sorting by id is a valid topological order.
    nodes.sort_by_key(Var::id);
    nodes
}
