//! Reverse-mode differentiation over a linear tape of matrix operations.

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::{matmul, matmul_nt, matmul_tn, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Operation with a hand-written vector-Jacobian product.
///
/// Implementations live next to the math they wrap (the spline kernel, the
/// log-determinant of a square matrix, ...).
pub trait CustomOp {
    fn name(&self) -> &'static str;

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor>;

    /// Gradients w.r.t. each input given the upstream gradient of the output.
    /// `None` marks an input that receives no gradient.
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &Tensor,
    ) -> Result<Vec<Option<Tensor>>>;

    /// Hash of any discrete branch taken during `forward` (bin indices,
    /// bound checks). Finite-difference checks skip probes that change it.
    fn branch_signature(&self, _inputs: &[&Tensor]) -> u64 {
        0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Tanh,
    Sigmoid,
    Relu,
    Exp,
    Ln,
    Softplus,
    Square,
}

impl Unary {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Tanh => x.tanh(),
            Unary::Sigmoid => sigmoid(x),
            Unary::Relu => x.max(0.0),
            Unary::Exp => x.exp(),
            Unary::Ln => x.ln(),
            Unary::Softplus => softplus(x),
            Unary::Square => x * x,
        }
    }

    /// Derivative given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Tanh => 1.0 - y * y,
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Exp => y,
            Unary::Ln => 1.0 / x,
            Unary::Softplus => sigmoid(x),
            Unary::Square => 2.0 * x,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Unary::Tanh => "tanh",
            Unary::Sigmoid => "sigmoid",
            Unary::Relu => "relu",
            Unary::Exp => "exp",
            Unary::Ln => "ln",
            Unary::Softplus => "softplus",
            Unary::Square => "square",
        }
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

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

enum Op {
    Leaf,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Unary(Var, Unary),
    Sum(Var),
    Mean(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    Custom(Vec<Var>, Box<dyn CustomOp>),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records operations during a forward pass and replays them backwards.
///
/// Every operation validates its operands' shapes and rejects non-finite
/// results, so a `Var` handed out by the tape always holds finite values.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    signature: u64,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. a recorded value, if it participated.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params
            .iter()
            .filter_map(|(id, v)| self.grads[v.0].as_ref().map(|g| (*id, g)))
    }
}

impl ParamStore {
    /// Adds the parameter gradients of one backward pass to the stored
    /// accumulators.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, g) in grads.params() {
            self.grad_mut(id).add_assign(g);
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn rows(&self, v: Var) -> usize {
        self.nodes[v.0].value.rows()
    }

    pub fn cols(&self, v: Var) -> usize {
        self.nodes[v.0].value.cols()
    }

    /// Hash of every discrete branch (relu sign, spline bin) taken so far.
    pub fn branch_signature(&self) -> u64 {
        self.signature
    }

    fn mix_signature(&mut self, h: u64) {
        self.signature = (self.signature ^ h).wrapping_mul(0x100_0000_01b3).rotate_left(17);
    }

    fn push(&mut self, op_name: &str, value: Tensor, op: Op, needs_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric {
                op: op_name.to_string(),
            });
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input (no gradient).
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push("constant", value, Op::Leaf, false)
    }

    /// Input whose gradient is reported by [`Gradients::wrt`].
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push("leaf", value, Op::Leaf, true)
    }

    /// Brings a stored parameter onto the tape. Repeated calls return the
    /// same handle.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        if let Some(v) = self.params.get(&id) {
            return Ok(*v);
        }
        let v = self.push(
            "param",
            store.value(id).clone(),
            Op::Param,
            true,
        )?;
        self.params.insert(id, v);
        Ok(v)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).numel() != self.value(b).numel()
            || self.rows(a) != self.rows(b)
        {
            return Err(Error::dim(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push("add", v, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push("sub", v, Op::Sub(a, b), ng)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push("mul", v, Op::Mul(a, b), ng)
    }

    /// Adds a length-`cols` vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let cols = self.cols(x);
        if self.value(row).numel() != cols {
            return Err(Error::dim(
                "add_row",
                format!("{:?} vs row {:?}", self.shape(x), self.shape(row)),
            ));
        }
        let r = self.value(row).data().to_vec();
        let mut v = self.value(x).clone();
        for chunk in v.data_mut().chunks_mut(cols) {
            for (o, b) in chunk.iter_mut().zip(&r) {
                *o += b;
            }
        }
        let ng = self.ng(x) || self.ng(row);
        self.push("add_row", v, Op::AddRow(x, row), ng)
    }

    /// Multiplies every row of `x` elementwise by a length-`cols` vector.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let cols = self.cols(x);
        if self.value(row).numel() != cols {
            return Err(Error::dim(
                "mul_row",
                format!("{:?} vs row {:?}", self.shape(x), self.shape(row)),
            ));
        }
        let r = self.value(row).data().to_vec();
        let mut v = self.value(x).clone();
        for chunk in v.data_mut().chunks_mut(cols) {
            for (o, b) in chunk.iter_mut().zip(&r) {
                *o *= b;
            }
        }
        let ng = self.ng(x) || self.ng(row);
        self.push("mul_row", v, Op::MulRow(x, row), ng)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let v = self.value(x).map(|a| a * factor);
        let ng = self.ng(x);
        self.push("scale", v, Op::Scale(x, factor), ng)
    }

    pub fn shift(&mut self, x: Var, offset: f64) -> Result<Var> {
        let v = self.value(x).map(|a| a + offset);
        let ng = self.ng(x);
        self.push("shift", v, Op::Shift(x), ng)
    }

    /// `a · b` for `a: [m×k]`, `b: [k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.cols(a) != self.rows(b) {
            return Err(Error::dim(
                "matmul",
                format!("{:?} · {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let v = matmul(self.value(a), self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push("matmul", v, Op::MatMul(a, b), ng)
    }

    /// `a · bᵀ` for `a: [m×k]`, `b: [n×k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.cols(a) != self.cols(b) {
            return Err(Error::dim(
                "matmul_nt",
                format!("{:?} · {:?}ᵀ", self.shape(a), self.shape(b)),
            ));
        }
        let v = matmul_nt(self.value(a), self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push("matmul_nt", v, Op::MatMulNt(a, b), ng)
    }

    pub fn unary(&mut self, x: Var, f: Unary) -> Result<Var> {
        let v = self.value(x).map(|a| f.apply(a));
        if f == Unary::Relu {
            let mut h = 0xcbf2_9ce4_8422_2325u64;
            for (i, a) in self.value(x).data().iter().enumerate() {
                if *a > 0.0 {
                    h = (h ^ i as u64).wrapping_mul(0x100_0000_01b3);
                }
            }
            self.mix_signature(h);
        }
        let ng = self.ng(x);
        self.push(f.name(), v, Op::Unary(x, f), ng)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Relu)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Exp)
    }

    pub fn ln(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Ln)
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Softplus)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Square)
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(x).sum());
        let ng = self.ng(x);
        self.push("sum", v, Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        if n == 0 {
            return Err(Error::EmptySequence("mean of empty tensor"));
        }
        let v = Tensor::scalar(self.value(x).sum() / n as f64);
        let ng = self.ng(x);
        self.push("mean", v, Op::Mean(x), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|p| self.rows(*p))
            .ok_or(Error::EmptySequence("concat_cols"))?;
        if parts.iter().any(|p| self.rows(*p) != rows) {
            return Err(Error::dim("concat_cols", "row counts differ"));
        }
        let widths: Vec<usize> = parts.iter().map(|p| self.cols(*p)).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row_slice(r));
            }
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        self.push(
            "concat_cols",
            Tensor::matrix(rows, total, data)?,
            Op::ConcatCols(parts.to_vec()),
            ng,
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = (self.rows(x), self.cols(x));
        if start + len > cols {
            return Err(Error::dim(
                "slice_cols",
                format!("{start}+{len} exceeds {cols} columns"),
            ));
        }
        let src = self.value(x);
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&src.row_slice(r)[start..start + len]);
        }
        let ng = self.ng(x);
        self.push(
            "slice_cols",
            Tensor::matrix(rows, len, data)?,
            Op::SliceCols(x, start),
            ng,
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts
            .first()
            .map(|p| self.cols(*p))
            .ok_or(Error::EmptySequence("concat_rows"))?;
        if parts.iter().any(|p| self.cols(*p) != cols) {
            return Err(Error::dim("concat_rows", "column counts differ"));
        }
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            data.extend_from_slice(self.value(*p).data());
            rows += self.rows(*p);
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        self.push(
            "concat_rows",
            Tensor::matrix(rows, cols, data)?,
            Op::ConcatRows(parts.to_vec()),
            ng,
        )
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = (self.rows(x), self.cols(x));
        if start + len > rows {
            return Err(Error::dim(
                "slice_rows",
                format!("{start}+{len} exceeds {rows} rows"),
            ));
        }
        let data = self.value(x).data()[start * cols..(start + len) * cols].to_vec();
        let ng = self.ng(x);
        self.push(
            "slice_rows",
            Tensor::matrix(len, cols, data)?,
            Op::SliceRows(x, start),
            ng,
        )
    }

    /// Rows of `x` picked by index (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let (rows, cols) = (self.rows(x), self.cols(x));
        if let Some(bad) = index.iter().find(|&&i| i >= rows) {
            return Err(Error::dim(
                "gather_rows",
                format!("row {bad} out of {rows}"),
            ));
        }
        let src = self.value(x);
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in index {
            data.extend_from_slice(src.row_slice(i));
        }
        let ng = self.ng(x);
        self.push(
            "gather_rows",
            Tensor::matrix(index.len(), cols, data)?,
            Op::GatherRows(x, index.to_vec()),
            ng,
        )
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let v = self.value(x).reshape(shape)?;
        let ng = self.ng(x);
        self.push("reshape", v, Op::Reshape(x), ng)
    }

    pub fn custom(&mut self, op: Box<dyn CustomOp>, inputs: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
        let out = op.forward(&vals)?;
        let sig = op.branch_signature(&vals);
        self.mix_signature(sig);
        let ng = inputs.iter().any(|v| self.ng(*v));
        let name = op.name();
        self.push(name, out, Op::Custom(inputs.to_vec(), op), ng)
    }

    /// Runs reverse-mode differentiation from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        let params = self.params.iter().map(|(id, v)| (*id, *v)).collect();
        Ok(Gradients { grads, params })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let send = |v: Var, contrib: Tensor, grads: &mut [Option<Tensor>]| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&contrib),
                slot => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Add(a, b) => {
                send(*a, g.reshape(self.shape(*a).to_vec())?, grads);
                send(*b, g.reshape(self.shape(*b).to_vec())?, grads);
            }
            Op::Sub(a, b) => {
                send(*a, g.reshape(self.shape(*a).to_vec())?, grads);
                send(*b, g.map(|x| -x).reshape(self.shape(*b).to_vec())?, grads);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                send(*a, g.zip_map(bv, |x, y| x * y).reshape(av.shape().to_vec())?, grads);
                send(*b, g.zip_map(av, |x, y| x * y).reshape(bv.shape().to_vec())?, grads);
            }
            Op::AddRow(x, row) => {
                send(*x, g.clone(), grads);
                let cols = g.cols();
                let mut acc = vec![0.0; cols];
                for chunk in g.data().chunks(cols) {
                    for (a, v) in acc.iter_mut().zip(chunk) {
                        *a += v;
                    }
                }
                send(*row, Tensor::new(self.shape(*row).to_vec(), acc)?, grads);
            }
            Op::MulRow(x, row) => {
                let cols = g.cols();
                let r = self.value(*row).data();
                let xv = self.value(*x);
                let mut gx = g.clone();
                let mut acc = vec![0.0; cols];
                for (gc, xc) in gx.data_mut().chunks_mut(cols).zip(xv.data().chunks(cols)) {
                    for j in 0..cols {
                        acc[j] += gc[j] * xc[j];
                        gc[j] *= r[j];
                    }
                }
                send(*x, gx, grads);
                send(*row, Tensor::new(self.shape(*row).to_vec(), acc)?, grads);
            }
            Op::Scale(x, f) => send(*x, g.map(|v| v * f), grads),
            Op::Shift(x) => send(*x, g.clone(), grads),
            Op::MatMul(a, b) => {
                // C = A B: dA = dC Bᵀ, dB = Aᵀ dC
                send(*a, matmul_nt(g, self.value(*b)), grads);
                send(*b, matmul_tn(self.value(*a), g), grads);
            }
            Op::MatMulNt(a, b) => {
                // C = A Bᵀ: dA = dC B, dB = dCᵀ A
                send(*a, matmul(g, self.value(*b)), grads);
                send(*b, matmul_tn(g, self.value(*a)), grads);
            }
            Op::Unary(x, f) => {
                let xv = self.value(*x);
                let mut out = g.clone();
                for ((o, &xi), &yi) in out
                    .data_mut()
                    .iter_mut()
                    .zip(xv.data())
                    .zip(node.value.data())
                {
                    *o *= f.derivative(xi, yi);
                }
                send(*x, out, grads);
            }
            Op::Sum(x) => {
                let gv = g.data()[0];
                send(*x, Tensor::full(self.shape(*x), gv), grads);
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel() as f64;
                let gv = g.data()[0] / n;
                send(*x, Tensor::full(self.shape(*x), gv), grads);
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for p in parts {
                    let w = self.cols(*p);
                    let mut data = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        data.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                    }
                    send(*p, Tensor::new(self.shape(*p).to_vec(), data)?, grads);
                    offset += w;
                }
            }
            Op::SliceCols(x, start) => {
                let (rows, cols) = (self.rows(*x), self.cols(*x));
                let w = g.cols();
                let mut out = Tensor::zeros(self.shape(*x));
                for r in 0..rows {
                    out.data_mut()[r * cols + start..r * cols + start + w]
                        .copy_from_slice(g.row_slice(r));
                }
                send(*x, out, grads);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).numel();
                    let data = g.data()[offset..offset + n].to_vec();
                    send(*p, Tensor::new(self.shape(*p).to_vec(), data)?, grads);
                    offset += n;
                }
            }
            Op::SliceRows(x, start) => {
                let cols = self.cols(*x);
                let mut out = Tensor::zeros(self.shape(*x));
                let n = g.numel();
                out.data_mut()[start * cols..start * cols + n].copy_from_slice(g.data());
                send(*x, out, grads);
            }
            Op::GatherRows(x, index) => {
                let cols = self.cols(*x);
                let mut out = Tensor::zeros(self.shape(*x));
                for (k, &i) in index.iter().enumerate() {
                    let dst = &mut out.data_mut()[i * cols..(i + 1) * cols];
                    for (d, s) in dst.iter_mut().zip(g.row_slice(k)) {
                        *d += s;
                    }
                }
                send(*x, out, grads);
            }
            Op::Reshape(x) => send(*x, g.reshape(self.shape(*x).to_vec())?, grads),
            Op::Custom(inputs, op) => {
                let vals: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
                let gs = op.backward(&vals, &node.value, g)?;
                for (v, gi) in inputs.iter().zip(gs) {
                    if let Some(gi) = gi {
                        if !gi.is_finite() {
                            return Err(Error::Numeric {
                                op: format!("{} (backward)", op.name()),
                            });
                        }
                        send(*v, gi, grads);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(&[1.0, -2.0, 3.0])).unwrap();
        let loss = tape.sum(x).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn half_sum_of_squares_gradient_is_input() {
        let mut tape = Tape::new();
        let xs = [0.5, -1.25, 4.0];
        let x = tape.leaf(Tensor::row(&xs)).unwrap();
        let sq = tape.square(x).unwrap();
        let s = tape.sum(sq).unwrap();
        let loss = tape.scale(s, 0.5).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &xs);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(&[1.0, 2.0])).unwrap();
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn non_finite_results_are_rejected() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(&[-1.0])).unwrap();
        assert!(matches!(tape.ln(x), Err(Error::Numeric { .. })));
        let big = tape.constant(Tensor::row(&[1e3])).unwrap();
        assert!(matches!(tape.exp(big), Err(Error::Numeric { .. })));
    }

    #[test]
    fn shared_params_accumulate_once_per_use() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::row(&[2.0]));
        let mut tape = Tape::new();
        let a = tape.param(&store, w).unwrap();
        let b = tape.param(&store, w).unwrap();
        assert_eq!(a, b);
        let p = tape.mul(a, b).unwrap();
        let loss = tape.sum(p).unwrap();
        let g = tape.backward(loss).unwrap();
        store.accumulate(&g);
        store.accumulate(&g);
        assert_eq!(store.grad(w).data(), &[8.0]);
    }
}
