//! Reverse-mode differentiation over a linear tape.
//!
//! Nodes are appended in creation order, which is already a topological order,
//! so [`Tape::backward`] is a single reverse sweep. Gradients are retained only
//! for parameter leaves; intermediate gradients are dropped once propagated.

use crate::conv;
use crate::error::TensorError;
use crate::scalar::{gemm, Scalar};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Param,
    Constant,
    MatMul(Var, Var),
    BiasAdd(Var, Var),
    Conv2d { input: Var, kernel: Var, stride: usize, padding: usize },
    ConvTranspose2d { input: Var, kernel: Var, stride: usize, padding: usize },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Reshape(Var),
    SliceCols { input: Var, start: usize },
    SliceRows { input: Var, start: usize },
    ConcatRows(Vec<Var>),
    Mse(Var, Var),
    Sum(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    needs_grad: bool,
}

/// Parameters of one LSTM cell, gate order `[input, forget, candidate, output]`.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    /// `[input_dim, 4 * units]`
    pub w_x: Var,
    /// `[units, 4 * units]`
    pub w_h: Var,
    /// `[4 * units]`
    pub bias: Var,
}

pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf; receives a gradient in [`Tape::backward`].
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Param, true)
    }

    /// Data leaf; never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` loss with respect to a parameter leaf.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }

    /// `[m, k] x [k, n] -> [m, n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k, n) = match (av.shape(), bv.shape()) {
            (&[m, k], &[k2, n]) if k == k2 => (m, k, n),
            (sa, sb) => return Err(TensorError::mismatch("matmul", format!("{sa:?} x {sb:?}"))),
        };
        let mut out = vec![T::zero(); m * n];
        gemm(false, false, m, n, k, av.data(), bv.data(), T::zero(), &mut out);
        let value = Tensor::new(&[m, n], out)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    /// Adds `bias` along the last axis of `x`.
    pub fn bias_add(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let c = *xv.shape().last().unwrap_or(&0);
        if bv.shape() != [c] {
            return Err(TensorError::mismatch(
                "bias_add",
                format!("bias {:?} for input {:?}", bv.shape(), xv.shape()),
            ));
        }
        let mut value = xv.clone();
        for chunk in value.data_mut().chunks_mut(c) {
            for (v, &b) in chunk.iter_mut().zip(bv.data()) {
                *v += b;
            }
        }
        let ng = self.needs(x) || self.needs(bias);
        Ok(self.push(value, Op::BiasAdd(x, bias), ng))
    }

    /// Affine map `x w + b` on `[batch, in]` rows.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        let y = self.matmul(x, w)?;
        self.bias_add(y, b)
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var, TensorError> {
        let value = conv::conv2d(self.value(input), self.value(kernel), stride, padding)?;
        let ng = self.needs(input) || self.needs(kernel);
        Ok(self.push(value, Op::Conv2d { input, kernel, stride, padding }, ng))
    }

    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        kernel: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var, TensorError> {
        let value = conv::conv_transpose2d(self.value(input), self.value(kernel), stride, padding)?;
        let ng = self.needs(input) || self.needs(kernel);
        Ok(self.push(value, Op::ConvTranspose2d { input, kernel, stride, padding }, ng))
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(T) -> T) -> Var {
        let value = self.value(x).map(f);
        let ng = self.needs(x);
        self.push(value, op, ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), |v| v.tanh())
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let f = T::lit(factor);
        self.unary(x, Op::Scale(x, factor), |v| v * f)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(TensorError::mismatch(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("add", a, b)?;
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::new(self.value(a).shape(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul(a, b), ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.value(x).clone().reshape(shape)?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::Reshape(x), ng))
    }

    /// Columns `start..start + len` of a `[rows, cols]` matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let (rows, cols) = match *xv.shape() {
            [r, c] if start + len <= c => (r, c),
            ref s => {
                return Err(TensorError::mismatch(
                    "slice_cols",
                    format!("columns {start}..{} of {s:?}", start + len),
                ))
            }
        };
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&xv.data()[r * cols + start..r * cols + start + len]);
        }
        let value = Tensor::new(&[rows, len], data)?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::SliceCols { input: x, start }, ng))
    }

    /// Entries `start..start + len` along the leading axis.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let shape = xv.shape();
        if shape.is_empty() || start + len > shape[0] {
            return Err(TensorError::mismatch(
                "slice_rows",
                format!("rows {start}..{} of {shape:?}", start + len),
            ));
        }
        let inner: usize = shape[1..].iter().product();
        let mut out_shape = shape.to_vec();
        out_shape[0] = len;
        let data = xv.data()[start * inner..(start + len) * inner].to_vec();
        let value = Tensor::new(&out_shape, data)?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::SliceRows { input: x, start }, ng))
    }

    /// Stacks tensors along the leading axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::mismatch("concat_rows", "no inputs"))?;
        let inner_shape = self.value(*first).shape()[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.shape()[1..] != inner_shape[..] {
                return Err(TensorError::mismatch(
                    "concat_rows",
                    format!("{:?} vs trailing {inner_shape:?}", v.shape()),
                ));
            }
            rows += v.shape()[0];
            data.extend_from_slice(v.data());
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(&inner_shape);
        let value = Tensor::new(&shape, data)?;
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), ng))
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var, TensorError> {
        self.same_shape("mse", pred, target)?;
        let (p, t) = (self.value(pred), self.value(target));
        let n = T::from_usize(p.len().max(1)).unwrap();
        let s: T = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        let ng = self.needs(pred) || self.needs(target);
        Ok(self.push(Tensor::scalar(s / n), Op::Mse(pred, target), ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let ng = self.needs(x);
        self.push(value, Op::Sum(x), ng)
    }

    /// One LSTM step on `[batch, input]` rows with `[batch, units]` state.
    pub fn lstm_step(&mut self, x: Var, h: Var, c: Var, p: &LstmVars) -> Result<(Var, Var), TensorError> {
        let units = match *self.value(h).shape() {
            [_, u] => u,
            ref s => return Err(TensorError::mismatch("lstm_step", format!("state shape {s:?}"))),
        };
        if self.value(p.w_h).shape() != [units, 4 * units] {
            return Err(TensorError::mismatch(
                "lstm_step",
                format!("recurrent weights {:?} for {units} units", self.value(p.w_h).shape()),
            ));
        }
        let zx = self.matmul(x, p.w_x)?;
        let zh = self.matmul(h, p.w_h)?;
        let z = self.add(zx, zh)?;
        let z = self.bias_add(z, p.bias)?;
        let i = self.slice_cols(z, 0, units)?;
        let f = self.slice_cols(z, units, units)?;
        let g = self.slice_cols(z, 2 * units, units)?;
        let o = self.slice_cols(z, 3 * units, units)?;
        let i = self.sigmoid(i);
        let f = self.sigmoid(f);
        let g = self.tanh(g);
        let o = self.sigmoid(o);
        let keep = self.mul(f, c)?;
        let write = self.mul(i, g)?;
        let c_next = self.add(keep, write)?;
        let squashed = self.tanh(c_next);
        let h_next = self.mul(o, squashed)?;
        Ok((h_next, c_next))
    }

    /// Back-propagates from a single-element `loss`.
    ///
    /// Every parameter leaf reachable from `loss` ends up with exactly one
    /// accumulated gradient; unreachable leaves keep `None`.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let loss_shape = self.value(loss).shape().to_vec();
        if self.value(loss).len() != 1 {
            return Err(TensorError::NonScalarLoss(loss_shape));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.needs(loss) {
            return Ok(());
        }
        self.grads[loss.0] = Some(Tensor::full(&loss_shape, T::one()));
        for idx in (0..=loss.0).rev() {
            let Some(g) = self.grads[idx].take() else { continue };
            let op = self.nodes[idx].op.clone();
            match op {
                Op::Param => {
                    self.grads[idx] = Some(g);
                }
                Op::Constant => {}
                _ => self.propagate(idx, &op, g)?,
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&mut self, idx: usize, op: &Op, g: Tensor<T>) -> Result<(), TensorError> {
        match *op {
            Op::Param | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.needs(a) {
                    let mut da = vec![T::zero(); m * k];
                    gemm(false, true, m, k, n, g.data(), bv.data(), T::zero(), &mut da);
                    let da = Tensor::new(&[m, k], da)?;
                    self.accumulate(a, da);
                }
                if self.needs(b) {
                    let av = self.value(a);
                    let mut db = vec![T::zero(); k * n];
                    gemm(true, false, k, n, m, av.data(), g.data(), T::zero(), &mut db);
                    let db = Tensor::new(&[k, n], db)?;
                    self.accumulate(b, db);
                }
            }
            Op::BiasAdd(x, bias) => {
                if self.needs(bias) {
                    let c = self.value(bias).len();
                    let mut db = vec![T::zero(); c];
                    for chunk in g.data().chunks(c) {
                        for (d, &v) in db.iter_mut().zip(chunk) {
                            *d += v;
                        }
                    }
                    self.accumulate(bias, Tensor::new(&[c], db)?);
                }
                self.accumulate(x, g);
            }
            Op::Conv2d { input, kernel, stride, padding } => {
                let (dx, dk) = conv::conv2d_backward(
                    self.value(input),
                    self.value(kernel),
                    &g,
                    stride,
                    padding,
                    self.needs(input),
                )?;
                if let Some(dx) = dx {
                    self.accumulate(input, dx);
                }
                self.accumulate(kernel, dk);
            }
            Op::ConvTranspose2d { input, kernel, stride, padding } => {
                let (dx, dk) = conv::conv_transpose2d_backward(
                    self.value(input),
                    self.value(kernel),
                    &g,
                    stride,
                    padding,
                    self.needs(input),
                )?;
                if let Some(dx) = dx {
                    self.accumulate(input, dx);
                }
                self.accumulate(kernel, dk);
            }
            Op::Relu(x) => {
                let mut d = g;
                for (dv, &xv) in d.data_mut().iter_mut().zip(self.nodes[x.0].value.data()) {
                    if xv <= T::zero() {
                        *dv = T::zero();
                    }
                }
                self.accumulate(x, d);
            }
            Op::Sigmoid(x) => {
                let mut d = g;
                for (dv, &y) in d.data_mut().iter_mut().zip(self.nodes[idx].value.data()) {
                    *dv *= y * (T::one() - y);
                }
                self.accumulate(x, d);
            }
            Op::Tanh(x) => {
                let mut d = g;
                for (dv, &y) in d.data_mut().iter_mut().zip(self.nodes[idx].value.data()) {
                    *dv *= T::one() - y * y;
                }
                self.accumulate(x, d);
            }
            Op::Scale(x, factor) => {
                let f = T::lit(factor);
                self.accumulate(x, g.map(|v| v * f));
            }
            Op::Add(a, b) => {
                if self.needs(b) {
                    self.accumulate(b, g.clone());
                }
                self.accumulate(a, g);
            }
            Op::Mul(a, b) => {
                if self.needs(a) {
                    let mut da = g.clone();
                    for (d, &v) in da.data_mut().iter_mut().zip(self.value(b).data()) {
                        *d *= v;
                    }
                    self.accumulate(a, da);
                }
                if self.needs(b) {
                    let mut db = g;
                    for (d, &v) in db.data_mut().iter_mut().zip(self.value(a).data()) {
                        *d *= v;
                    }
                    self.accumulate(b, db);
                }
            }
            Op::Reshape(x) => {
                let shape = self.value(x).shape().to_vec();
                self.accumulate(x, g.reshape(&shape)?);
            }
            Op::SliceCols { input, start } => {
                let shape = self.value(input).shape().to_vec();
                let (rows, cols) = (shape[0], shape[1]);
                let len = g.shape()[1];
                let mut d = Tensor::zeros(&shape);
                for r in 0..rows {
                    d.data_mut()[r * cols + start..r * cols + start + len]
                        .copy_from_slice(&g.data()[r * len..(r + 1) * len]);
                }
                self.accumulate(input, d);
            }
            Op::SliceRows { input, start } => {
                let shape = self.value(input).shape().to_vec();
                let inner: usize = shape[1..].iter().product();
                let mut d = Tensor::zeros(&shape);
                d.data_mut()[start * inner..start * inner + g.len()].copy_from_slice(g.data());
                self.accumulate(input, d);
            }
            Op::ConcatRows(ref parts) => {
                let mut offset = 0;
                for &p in parts {
                    let shape = self.value(p).shape().to_vec();
                    let n = self.value(p).len();
                    if self.needs(p) {
                        let d = Tensor::new(&shape, g.data()[offset..offset + n].to_vec())?;
                        self.accumulate(p, d);
                    }
                    offset += n;
                }
            }
            Op::Mse(pred, target) => {
                let scale = g.data()[0] * T::lit(2.0) / T::from_usize(self.value(pred).len().max(1)).unwrap();
                let diff: Vec<T> = self
                    .value(pred)
                    .data()
                    .iter()
                    .zip(self.value(target).data())
                    .map(|(&p, &t)| (p - t) * scale)
                    .collect();
                let shape = self.value(pred).shape().to_vec();
                if self.needs(target) {
                    let neg = diff.iter().map(|&v| -v).collect();
                    self.accumulate(target, Tensor::new(&shape, neg)?);
                }
                self.accumulate(pred, Tensor::new(&shape, diff)?);
            }
            Op::Sum(x) => {
                let shape = self.value(x).shape().to_vec();
                self.accumulate(x, Tensor::full(&shape, g.data()[0]));
            }
        }
        Ok(())
    }
}
