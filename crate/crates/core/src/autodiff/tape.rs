use super::tensor::{kernels, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBias(Var, Var),
    Affine(Var, f64),
    ScaleBy(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Map(Var, fn(f64, f64) -> f64),
    SoftmaxRows(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Reshape(Var),
    Sum(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normed: Vec<f64>,
        inv_std: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
        scale: f64,
    },
    SquaredError {
        pred: Var,
        target: Vec<f64>,
        mask: Vec<bool>,
        scale: f64,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Define-by-run record of tensor operations for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so every operation's inputs
/// precede it and a single reverse sweep visits each node exactly once.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    checked: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of each bound leaf into the matching tensor's buffer.
    pub fn accumulate_into(&self, vars: &[Var], tensors: &mut [Tensor]) {
        for (v, t) in vars.iter().zip(tensors.iter_mut()) {
            if let Some(g) = self.get(*v) {
                t.accumulate_grad(g);
            }
        }
    }
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            checked: cfg!(debug_assertions),
        }
    }

    /// Tape that rejects any non-finite intermediate value.
    pub fn checked() -> Self {
        Tape {
            nodes: Vec::new(),
            checked: true,
        }
    }

    pub fn set_checked(&mut self, checked: bool) {
        self.checked = checked;
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

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        if self.checked && !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::MatMul(a, b)
            | Op::MatMulNt(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRowBias(a, b)
            | Op::ScaleBy(a, b) => self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad,
            Op::Transpose(a)
            | Op::Affine(a, _)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Relu(a)
            | Op::Map(a, _)
            | Op::SoftmaxRows(a)
            | Op::SliceRows(a, _)
            | Op::SliceCols(a, _)
            | Op::Reshape(a)
            | Op::Sum(a) => self.nodes[a.0].needs_grad,
            Op::ConcatRows(vs) | Op::ConcatCols(vs) => {
                vs.iter().any(|v| self.nodes[v.0].needs_grad)
            }
            Op::LayerNorm { x, gamma, beta, .. } => {
                [x, gamma, beta].iter().any(|v| self.nodes[v.0].needs_grad)
            }
            Op::CrossEntropy { logits, .. } => self.nodes[logits.0].needs_grad,
            Op::SquaredError { pred, .. } => self.nodes[pred.0].needs_grad,
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a leaf. Its gradient is tracked iff the tensor requires one.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let needs_grad = t.requires_grad();
        self.nodes.push(Node {
            value: t.detached(),
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: if t.requires_grad() { t.detached() } else { t },
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records one leaf per tensor, preserving order.
    pub fn bind(&mut self, tensors: &[Tensor]) -> Vec<Var> {
        tensors.iter().map(|t| self.leaf(t)).collect()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.cols() {
            return Err(Error::dim(
                "matmul_nt",
                format!("{:?} x {:?}ᵀ", ta.shape(), tb.shape()),
            ));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
        let mut out = vec![0.0; m * n];
        kernels::matmul_nt(ta.data(), tb.data(), &mut out, m, k, n);
        self.push(Tensor::matrix(m, n, out)?, Op::MatMulNt(a, b), "matmul_nt")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a), "transpose")
    }

    fn zip_with(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        check_same(op, ta, tb)?;
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    fn map_values(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.value(a);
        Tensor::new(
            ta.shape().to_vec(),
            ta.data().iter().map(|x| f(*x)).collect(),
        )
        .expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("add", a, b, |x, y| x + y)?;
        self.push(out, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("sub", a, b, |x, y| x - y)?;
        self.push(out, Op::Sub(a, b), "sub")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("mul", a, b, |x, y| x * y)?;
        self.push(out, Op::Mul(a, b), "mul")
    }

    /// Adds a `1×n` row to every row of an `m×n` matrix.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tb.rows() != 1 || tb.cols() != tx.cols() {
            return Err(Error::dim(
                "add_row_bias",
                format!("{:?} + {:?}", tx.shape(), tb.shape()),
            ));
        }
        let n = tx.cols();
        let mut out = tx.data().to_vec();
        for row in out.chunks_mut(n) {
            add_into(row, tb.data());
        }
        let out = Tensor::new(tx.shape().to_vec(), out)?;
        self.push(out, Op::AddRowBias(x, bias), "add_row_bias")
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.affine(a, factor, 0.0)
    }

    /// `factor · a + shift`
    pub fn affine(&mut self, a: Var, factor: f64, shift: f64) -> Result<Var> {
        let out = self.map_values(a, |x| factor * x + shift);
        self.push(out, Op::Affine(a, factor), "affine")
    }

    /// Multiplies every entry of `x` by the `1×1` value `s`.
    pub fn scale_by(&mut self, s: Var, x: Var) -> Result<Var> {
        let ts = self.value(s);
        if ts.numel() != 1 {
            return Err(Error::dim(
                "scale_by",
                format!("scalar expected, got {:?}", ts.shape()),
            ));
        }
        let k = ts.data()[0];
        let out = self.map_values(x, |v| k * v);
        self.push(out, Op::ScaleBy(s, x), "scale_by")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.map_values(a, f64::tanh);
        self.push(out, Op::Tanh(a), "tanh")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.map_values(a, sigmoid);
        self.push(out, Op::Sigmoid(a), "sigmoid")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.map_values(a, |x| x.max(0.0));
        self.push(out, Op::Relu(a), "relu")
    }

    /// Elementwise map with a caller-supplied derivative `df(x, f(x))`.
    pub fn map(&mut self, a: Var, f: fn(f64) -> f64, df: fn(f64, f64) -> f64) -> Result<Var> {
        let out = self.map_values(a, f);
        self.push(out, Op::Map(a, df), "map")
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        self.softmax_rows_masked(x, None)
    }

    /// Row softmax. Entries whose mask bit is `false` get exactly zero weight.
    pub fn softmax_rows_masked(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = (tx.rows(), tx.cols());
        if let Some(mask) = mask {
            if mask.len() != m * n {
                return Err(Error::dim(
                    "softmax_rows",
                    format!("mask len {} for {}x{}", mask.len(), m, n),
                ));
            }
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = tx.row_slice(i);
            let allowed = |j: usize| mask.is_none_or(|mk| mk[i * n + j]);
            let max = (0..n)
                .filter(|&j| allowed(j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::Usage(format!("softmax row {} is fully masked", i)));
            }
            let mut total = 0.0;
            for j in 0..n {
                if allowed(j) {
                    let e = (row[j] - max).exp();
                    out[i * n + j] = e;
                    total += e;
                }
            }
            for v in &mut out[i * n..(i + 1) * n] {
                *v /= total;
            }
        }
        self.push(
            Tensor::matrix(m, n, out)?,
            Op::SoftmaxRows(x),
            "softmax_rows",
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat_rows", "no inputs"))?;
        let n = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let t = self.value(*p);
            if t.cols() != n {
                return Err(Error::dim(
                    "concat_rows",
                    format!("width {} vs {}", t.cols(), n),
                ));
            }
            data.extend_from_slice(t.data());
            rows += t.rows();
        }
        self.push(
            Tensor::matrix(rows, n, data)?,
            Op::ConcatRows(parts.to_vec()),
            "concat_rows",
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat_cols", "no inputs"))?;
        let m = self.value(*first).rows();
        let mut n = 0;
        for p in parts {
            let t = self.value(*p);
            if t.rows() != m {
                return Err(Error::dim(
                    "concat_cols",
                    format!("height {} vs {}", t.rows(), m),
                ));
            }
            n += t.cols();
        }
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for p in parts {
                data.extend_from_slice(self.value(*p).row_slice(i));
            }
        }
        self.push(
            Tensor::matrix(m, n, data)?,
            Op::ConcatCols(parts.to_vec()),
            "concat_cols",
        )
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        if start + len > t.rows() || len == 0 {
            return Err(Error::dim(
                "slice_rows",
                format!("rows {}..{} of {}", start, start + len, t.rows()),
            ));
        }
        let n = t.cols();
        let data = t.data()[start * n..(start + len) * n].to_vec();
        self.push(
            Tensor::matrix(len, n, data)?,
            Op::SliceRows(x, start),
            "slice_rows",
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        if start + len > t.cols() || len == 0 {
            return Err(Error::dim(
                "slice_cols",
                format!("cols {}..{} of {}", start, start + len, t.cols()),
            ));
        }
        let m = t.rows();
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&t.row_slice(i)[start..start + len]);
        }
        self.push(
            Tensor::matrix(m, len, data)?,
            Op::SliceCols(x, start),
            "slice_cols",
        )
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let t = self.value(x).detached().reshaped(vec![rows, cols])?;
        self.push(t, Op::Reshape(x), "reshape")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), "sum")
    }

    /// Per-row layer normalisation with a learned `1×n` gain and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let (m, n) = (tx.rows(), tx.cols());
        if tg.shape() != [1, n] || tb.shape() != [1, n] {
            return Err(Error::dim(
                "layer_norm",
                format!("{:?} with gain {:?}", tx.shape(), tg.shape()),
            ));
        }
        let mut normed = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = tx.row_slice(i);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[i] = inv;
            for j in 0..n {
                let h = (row[j] - mean) * inv;
                normed[i * n + j] = h;
                out[i * n + j] = h * tg.data()[j] + tb.data()[j];
            }
        }
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            normed,
            inv_std,
        };
        self.push(Tensor::matrix(m, n, out)?, op, "layer_norm")
    }

    /// `scale · Σ −log softmax(logits[t])[target[t]]` over rows with a target.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[Option<usize>],
        scale: f64,
    ) -> Result<Var> {
        let t = self.value(logits);
        let (m, n) = (t.rows(), t.cols());
        if targets.len() != m {
            return Err(Error::dim(
                "cross_entropy",
                format!("{} targets for {} rows", targets.len(), m),
            ));
        }
        let mut probs = vec![0.0; m * n];
        let mut loss = 0.0;
        for (i, target) in targets.iter().enumerate() {
            let Some(y) = *target else { continue };
            if y >= n {
                return Err(Error::dim("cross_entropy", format!("class {} of {}", y, n)));
            }
            let row = t.row_slice(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = row.iter().map(|v| (v - max).exp()).sum();
            for j in 0..n {
                probs[i * n + j] = (row[j] - max).exp() / total;
            }
            loss += total.ln() + max - row[y];
        }
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            probs,
            scale,
        };
        self.push(Tensor::scalar(scale * loss), op, "cross_entropy")
    }

    /// `scale · Σ (pred − target)²` over rows whose mask bit is set.
    pub fn squared_error(
        &mut self,
        pred: Var,
        target: &Tensor,
        mask: &[bool],
        scale: f64,
    ) -> Result<Var> {
        let t = self.value(pred);
        check_same("squared_error", t, target)?;
        if mask.len() != t.rows() {
            return Err(Error::dim(
                "squared_error",
                format!("mask len {} for {} rows", mask.len(), t.rows()),
            ));
        }
        let n = t.cols();
        let mut loss = 0.0;
        for (i, &on) in mask.iter().enumerate() {
            if on {
                for j in 0..n {
                    loss += (t.data()[i * n + j] - target.data()[i * n + j]).powi(2);
                }
            }
        }
        let op = Op::SquaredError {
            pred,
            target: target.data().to_vec(),
            mask: mask.to_vec(),
            scale,
        };
        self.push(Tensor::scalar(scale * loss), op, "squared_error")
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.needs_grad {
                self.propagate(idx, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        for (idx, g) in grads.iter_mut().enumerate() {
            if !self.nodes[idx].needs_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let mut acc = |v: Var, delta: &dyn Fn(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let n = self.nodes[v.0].value.numel();
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
            delta(buf);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                acc(*a, &|buf| kernels::matmul_nt(g, tb.data(), buf, m, n, k));
                acc(*b, &|buf| kernels::matmul_tn(ta.data(), g, buf, m, k, n));
            }
            Op::MatMulNt(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
                acc(*a, &|buf| kernels::matmul(g, tb.data(), buf, m, n, k));
                acc(*b, &|buf| kernels::matmul_tn(g, ta.data(), buf, m, n, k));
            }
            Op::Transpose(a) => {
                let (r, c) = (out.rows(), out.cols());
                acc(*a, &|buf| {
                    for i in 0..r {
                        for j in 0..c {
                            buf[j * r + i] += g[i * c + j];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &|buf| add_into(buf, g));
                acc(*b, &|buf| add_into(buf, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &|buf| add_into(buf, g));
                acc(*b, &|buf| buf.iter_mut().zip(g).for_each(|(d, s)| *d -= s));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                acc(*a, &|buf| {
                    for ((d, s), y) in buf.iter_mut().zip(g).zip(tb.data()) {
                        *d += s * y;
                    }
                });
                acc(*b, &|buf| {
                    for ((d, s), x) in buf.iter_mut().zip(g).zip(ta.data()) {
                        *d += s * x;
                    }
                });
            }
            Op::AddRowBias(x, b) => {
                let n = out.cols();
                acc(*x, &|buf| add_into(buf, g));
                acc(*b, &|buf| {
                    for row in g.chunks(n) {
                        add_into(buf, row);
                    }
                });
            }
            Op::Affine(a, factor) => {
                acc(*a, &|buf| {
                    buf.iter_mut().zip(g).for_each(|(d, s)| *d += factor * s)
                });
            }
            Op::ScaleBy(s, x) => {
                let k = self.value(*s).data()[0];
                let tx = self.value(*x);
                acc(*s, &|buf| {
                    buf[0] += g.iter().zip(tx.data()).map(|(a, b)| a * b).sum::<f64>()
                });
                acc(*x, &|buf| {
                    buf.iter_mut().zip(g).for_each(|(d, v)| *d += k * v)
                });
            }
            Op::Tanh(a) => acc(*a, &|buf| {
                for ((d, s), y) in buf.iter_mut().zip(g).zip(out.data()) {
                    *d += s * (1.0 - y * y);
                }
            }),
            Op::Sigmoid(a) => acc(*a, &|buf| {
                for ((d, s), y) in buf.iter_mut().zip(g).zip(out.data()) {
                    *d += s * y * (1.0 - y);
                }
            }),
            Op::Relu(a) => {
                let ta = self.value(*a);
                acc(*a, &|buf| {
                    for ((d, s), x) in buf.iter_mut().zip(g).zip(ta.data()) {
                        if *x > 0.0 {
                            *d += s;
                        }
                    }
                })
            }
            Op::Map(a, df) => {
                let ta = self.value(*a);
                acc(*a, &|buf| {
                    for (((d, s), x), y) in buf.iter_mut().zip(g).zip(ta.data()).zip(out.data()) {
                        *d += s * df(*x, *y);
                    }
                })
            }
            Op::SoftmaxRows(a) => {
                let n = out.cols();
                acc(*a, &|buf| {
                    for ((brow, grow), yrow) in
                        buf.chunks_mut(n).zip(g.chunks(n)).zip(out.data().chunks(n))
                    {
                        let dot: f64 = grow.iter().zip(yrow).map(|(s, y)| s * y).sum();
                        for j in 0..n {
                            brow[j] += yrow[j] * (grow[j] - dot);
                        }
                    }
                })
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).numel();
                    let start = offset;
                    acc(*p, &|buf| add_into(buf, &g[start..start + len]));
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    let start = offset;
                    acc(*p, &|buf| {
                        for (i, brow) in buf.chunks_mut(w).enumerate() {
                            add_into(brow, &g[i * total + start..i * total + start + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::SliceRows(x, start) => {
                let n = out.cols();
                let len = out.numel();
                acc(*x, &|buf| add_into(&mut buf[start * n..start * n + len], g));
            }
            Op::SliceCols(x, start) => {
                let w = out.cols();
                let n = self.value(*x).cols();
                acc(*x, &|buf| {
                    for (i, grow) in g.chunks(w).enumerate() {
                        add_into(&mut buf[i * n + start..i * n + start + w], grow);
                    }
                });
            }
            Op::Reshape(x) => acc(*x, &|buf| add_into(buf, g)),
            Op::Sum(x) => acc(*x, &|buf| buf.iter_mut().for_each(|d| *d += g[0])),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normed,
                inv_std,
            } => {
                let n = out.cols();
                let tg = self.value(*gamma);
                acc(*beta, &|buf| {
                    for grow in g.chunks(n) {
                        add_into(buf, grow);
                    }
                });
                acc(*gamma, &|buf| {
                    for (grow, hrow) in g.chunks(n).zip(normed.chunks(n)) {
                        for j in 0..n {
                            buf[j] += grow[j] * hrow[j];
                        }
                    }
                });
                acc(*x, &|buf| {
                    for (i, ((brow, grow), hrow)) in buf
                        .chunks_mut(n)
                        .zip(g.chunks(n))
                        .zip(normed.chunks(n))
                        .enumerate()
                    {
                        let dh: Vec<f64> = grow.iter().zip(tg.data()).map(|(s, w)| s * w).collect();
                        let mean_dh = dh.iter().sum::<f64>() / n as f64;
                        let mean_dh_h =
                            dh.iter().zip(hrow).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        for j in 0..n {
                            brow[j] += inv_std[i] * (dh[j] - mean_dh - hrow[j] * mean_dh_h);
                        }
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                scale,
            } => {
                let n = self.value(*logits).cols();
                let k = scale * g[0];
                acc(*logits, &|buf| {
                    for (i, target) in targets.iter().enumerate() {
                        if let Some(y) = target {
                            for j in 0..n {
                                let onehot = if j == *y { 1.0 } else { 0.0 };
                                buf[i * n + j] += k * (probs[i * n + j] - onehot);
                            }
                        }
                    }
                });
            }
            Op::SquaredError {
                pred,
                target,
                mask,
                scale,
            } => {
                let tp = self.value(*pred);
                let n = tp.cols();
                let k = 2.0 * scale * g[0];
                acc(*pred, &|buf| {
                    for (i, &on) in mask.iter().enumerate() {
                        if on {
                            for j in i * n..(i + 1) * n {
                                buf[j] += k * (tp.data()[j] - target[j]);
                            }
                        }
                    }
                });
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
