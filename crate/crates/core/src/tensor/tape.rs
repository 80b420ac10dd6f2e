use super::{gemm_acc, Tensor};
use crate::error::{Error, Result};

const LAYERNORM_EPS: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    /// Elementwise add; `rhs` may be a single row broadcast over rows.
    Add(Var, Var, bool),
    /// Elementwise multiply; `rhs` may be a single row broadcast over rows.
    Mul(Var, Var, bool),
    Scale(Var, f64),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Transpose(Var),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    LayerNormRows(Var, Vec<f64>),
    MeanRows(Var),
    Sum(Var),
    Log(Var),
    Bce {
        logits: Var,
        targets: Vec<f64>,
        weights: Vec<f64>,
        denom: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Single-threaded record of primitive operations. Nodes are appended in
/// evaluation order, so reverse index order is a reverse topological order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &str, a: &Tensor, b: &Tensor) -> Error {
    Error::InvalidInput(format!(
        "{op}: incompatible shapes {:?} and {:?}",
        a.shape(),
        b.shape()
    ))
}

fn mat(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
    Tensor {
        shape: vec![rows, cols],
        data,
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// A constant input; gradients flow into it but it is not a parameter.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// A trainable parameter identified by `id` in the caller's parameter set.
    pub fn param(&mut self, id: usize, t: Tensor) -> Var {
        self.push(t, Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = (ta.rows(), ta.cols());
        let (k2, n) = (tb.rows(), tb.cols());
        if k != k2 {
            return Err(shape_err("matmul", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(
            m,
            k,
            n,
            ta.data(),
            (k as isize, 1),
            tb.data(),
            (n as isize, 1),
            &mut out,
        );
        Ok(self.push(mat(m, n, out), Op::MatMul(a, b)))
    }

    fn broadcast_check(&self, op: &str, a: Var, b: Var) -> Result<bool> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows() == tb.rows() && ta.cols() == tb.cols() {
            Ok(false)
        } else if tb.rows() == 1 && tb.cols() == ta.cols() {
            Ok(true)
        } else {
            Err(shape_err(op, ta, tb))
        }
    }

    /// `a + b`; `b` may be a `1 x cols` row added to every row of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let bcast = self.broadcast_check("add", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let c = ta.cols();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + if bcast { tb.data[i % c] } else { tb.data[i] })
            .collect();
        let out = mat(ta.rows(), c, data);
        Ok(self.push(out, Op::Add(a, b, bcast)))
    }

    /// Elementwise `a * b`; `b` may be a `1 x cols` row.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let bcast = self.broadcast_check("mul", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let c = ta.cols();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * if bcast { tb.data[i % c] } else { tb.data[i] })
            .collect();
        let out = mat(ta.rows(), c, data);
        Ok(self.push(out, Op::Mul(a, b, bcast)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a);
        let out = mat(t.rows(), t.cols(), t.data.iter().map(|v| v * s).collect());
        self.push(out, Op::Scale(a, s))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidInput("concat_rows of nothing".into()))?;
        let c = self.value(*first).cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.cols() != c {
                return Err(shape_err("concat_rows", self.value(*first), t));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        Ok(self.push(mat(rows, c, data), Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidInput("concat_cols of nothing".into()))?;
        let r = self.value(*first).rows();
        for &p in parts {
            if self.value(p).rows() != r {
                return Err(shape_err("concat_cols", self.value(*first), self.value(p)));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        Ok(self.push(mat(r, total, data), Op::ConcatCols(parts.to_vec())))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        if start >= end || end > t.rows() {
            return Err(Error::InvalidInput(format!(
                "slice_rows {start}..{end} of {} rows",
                t.rows()
            )));
        }
        let c = t.cols();
        let out = mat(end - start, c, t.data[start * c..end * c].to_vec());
        Ok(self.push(out, Op::SliceRows(a, start)))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        if start >= end || end > t.cols() {
            return Err(Error::InvalidInput(format!(
                "slice_cols {start}..{end} of {} cols",
                t.cols()
            )));
        }
        let mut data = Vec::with_capacity(t.rows() * (end - start));
        for i in 0..t.rows() {
            data.extend_from_slice(&t.row(i)[start..end]);
        }
        let out = mat(t.rows(), end - start, data);
        Ok(self.push(out, Op::SliceCols(a, start)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (r, c) = (t.rows(), t.cols());
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = t.data[i * c + j];
            }
        }
        self.push(mat(c, r, data), Op::Transpose(a))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let out = mat(t.rows(), t.cols(), t.data.iter().map(|&v| f(v)).collect());
        self.push(out, op)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |v| v.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (r, c) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            data.extend(softmax(t.row(i)));
        }
        self.push(mat(r, c, data), Op::SoftmaxRows(a))
    }

    /// Row-wise standardisation to zero mean and unit variance, no affine.
    pub fn layernorm_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (r, c) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(r * c);
        let mut inv_std = Vec::with_capacity(r);
        for i in 0..r {
            let row = t.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + LAYERNORM_EPS).sqrt();
            inv_std.push(s);
            data.extend(row.iter().map(|v| (v - mean) * s));
        }
        self.push(mat(r, c, data), Op::LayerNormRows(a, inv_std))
    }

    /// Column means: `n x d -> 1 x d`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (r, c) = (t.rows(), t.cols());
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, v) in out.iter_mut().zip(t.row(i)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= r as f64);
        self.push(mat(1, c, out), Op::MeanRows(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// `sum_i w_i * bce_with_logits(z_i, t_i) / denom` as a scalar node.
    pub fn weighted_bce(
        &mut self,
        logits: Var,
        targets: &[f64],
        weights: &[f64],
        denom: f64,
    ) -> Result<Var> {
        let z = self.value(logits);
        if z.len() != targets.len() || z.len() != weights.len() {
            return Err(Error::InvalidInput(format!(
                "bce: {} logits, {} targets, {} weights",
                z.len(),
                targets.len(),
                weights.len()
            )));
        }
        if !z.all_finite() {
            return Err(Error::Numeric(format!("non-finite logits {:?}", z.data)));
        }
        if !(denom > 0.0) {
            return Err(Error::InvalidInput("bce denominator must be positive".into()));
        }
        let loss: f64 = z
            .data
            .iter()
            .zip(targets)
            .zip(weights)
            .map(|((&z, &t), &w)| w * bce_with_logits(z, t))
            .sum::<f64>()
            / denom;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                denom,
            },
        ))
    }

    /// Reverse accumulation from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::InvalidInput(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        let mut params: Vec<(usize, Vec<f64>)> = Vec::new();
        let mut leaves: Vec<(usize, Vec<f64>)> = Vec::new();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let out = &node.value;
            match &node.op {
                Op::Leaf => leaves.push((idx, g)),
                Op::Param(id) => params.push((*id, g)),
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    // dA += dC * B^T
                    let ga = slot(&mut grads, *a, m * k);
                    gemm_acc(m, n, k, &g, (n as isize, 1), tb.data(), (1, n as isize), ga);
                    // dB += A^T * dC
                    let gb = slot(&mut grads, *b, k * n);
                    gemm_acc(k, m, n, ta.data(), (1, k as isize), &g, (n as isize, 1), gb);
                }
                Op::Add(a, b, bcast) => {
                    accumulate(slot(&mut grads, *a, g.len()), &g);
                    let c = out.cols();
                    if *bcast {
                        let gb = slot(&mut grads, *b, c);
                        for (i, v) in g.iter().enumerate() {
                            gb[i % c] += v;
                        }
                    } else {
                        accumulate(slot(&mut grads, *b, g.len()), &g);
                    }
                }
                Op::Mul(a, b, bcast) => {
                    let c = out.cols();
                    let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let bv = |i: usize| if *bcast { tb.data[i % c] } else { tb.data[i] };
                    let ga: Vec<f64> = g.iter().enumerate().map(|(i, v)| v * bv(i)).collect();
                    let mut gb = vec![0.0; tb.len()];
                    for (i, v) in g.iter().enumerate() {
                        let j = if *bcast { i % c } else { i };
                        gb[j] += v * ta.data[i];
                    }
                    accumulate(slot(&mut grads, *a, ga.len()), &ga);
                    accumulate(slot(&mut grads, *b, gb.len()), &gb);
                }
                Op::Scale(a, s) => {
                    let ga = slot(&mut grads, *a, g.len());
                    for (o, v) in ga.iter_mut().zip(&g) {
                        *o += v * s;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        accumulate(slot(&mut grads, p, len), &g[off..off + len]);
                        off += len;
                    }
                }
                Op::ConcatCols(parts) => {
                    let total = out.cols();
                    let mut col = 0;
                    for &p in parts {
                        let (r, c) = (self.value(p).rows(), self.value(p).cols());
                        let gp = slot(&mut grads, p, r * c);
                        for i in 0..r {
                            for j in 0..c {
                                gp[i * c + j] += g[i * total + col + j];
                            }
                        }
                        col += c;
                    }
                }
                Op::SliceRows(a, start) => {
                    let c = out.cols();
                    let len = self.value(*a).len();
                    let ga = slot(&mut grads, *a, len);
                    accumulate(&mut ga[start * c..start * c + g.len()], &g);
                }
                Op::SliceCols(a, start) => {
                    let (r, w) = (out.rows(), out.cols());
                    let c = self.value(*a).cols();
                    let len = self.value(*a).len();
                    let ga = slot(&mut grads, *a, len);
                    for i in 0..r {
                        for j in 0..w {
                            ga[i * c + start + j] += g[i * w + j];
                        }
                    }
                }
                Op::Transpose(a) => {
                    // out is c x r; input is r x c.
                    let (c, r) = (out.rows(), out.cols());
                    let ga = slot(&mut grads, *a, r * c);
                    for j in 0..c {
                        for i in 0..r {
                            ga[i * c + j] += g[j * r + i];
                        }
                    }
                }
                Op::Tanh(a) => {
                    let ga = slot(&mut grads, *a, g.len());
                    for ((o, v), y) in ga.iter_mut().zip(&g).zip(&out.data) {
                        *o += v * (1.0 - y * y);
                    }
                }
                Op::Relu(a) => {
                    let ga = slot(&mut grads, *a, g.len());
                    for ((o, v), y) in ga.iter_mut().zip(&g).zip(&out.data) {
                        if *y > 0.0 {
                            *o += v;
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let ga = slot(&mut grads, *a, g.len());
                    for ((o, v), y) in ga.iter_mut().zip(&g).zip(&out.data) {
                        *o += v * y * (1.0 - y);
                    }
                }
                Op::Log(a) => {
                    let x = &self.nodes[a.0].value.data;
                    let gx: Vec<f64> = g.iter().zip(x).map(|(v, x)| v / x).collect();
                    accumulate(slot(&mut grads, *a, gx.len()), &gx);
                }
                Op::SoftmaxRows(a) => {
                    let (r, c) = (out.rows(), out.cols());
                    let ga = slot(&mut grads, *a, r * c);
                    for i in 0..r {
                        let y = &out.data[i * c..(i + 1) * c];
                        let gy = &g[i * c..(i + 1) * c];
                        let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            ga[i * c + j] += y[j] * (gy[j] - dot);
                        }
                    }
                }
                Op::LayerNormRows(a, inv_std) => {
                    let (r, c) = (out.rows(), out.cols());
                    let ga = slot(&mut grads, *a, r * c);
                    let cf = c as f64;
                    for i in 0..r {
                        let xh = &out.data[i * c..(i + 1) * c];
                        let gy = &g[i * c..(i + 1) * c];
                        let mean_g = gy.iter().sum::<f64>() / cf;
                        let mean_gx = gy.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / cf;
                        for j in 0..c {
                            ga[i * c + j] += inv_std[i] * (gy[j] - mean_g - xh[j] * mean_gx);
                        }
                    }
                }
                Op::MeanRows(a) => {
                    let (r, c) = (self.value(*a).rows(), out.cols());
                    let ga = slot(&mut grads, *a, r * c);
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g[j] / r as f64;
                        }
                    }
                }
                Op::Sum(a) => {
                    let len = self.value(*a).len();
                    let ga = slot(&mut grads, *a, len);
                    ga.iter_mut().for_each(|o| *o += g[0]);
                }
                Op::Bce {
                    logits,
                    targets,
                    weights,
                    denom,
                } => {
                    let z = &self.nodes[logits.0].value.data;
                    let gz: Vec<f64> = z
                        .iter()
                        .zip(targets)
                        .zip(weights)
                        .map(|((&z, &t), &w)| g[0] * w * (sigmoid(z) - t) / denom)
                        .collect();
                    accumulate(slot(&mut grads, *logits, gz.len()), &gz);
                }
            }
        }

        Ok(Gradients {
            params,
            leaves,
            shapes: self.nodes.iter().map(|n| n.value.shape.clone()).collect(),
        })
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn accumulate(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
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

pub fn softmax(row: &[f64]) -> impl Iterator<Item = f64> + '_ {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
    row.iter().map(move |v| (v - max).exp() / sum)
}

/// `softplus(z) - t * z`, stable for large |z|.
pub fn bce_with_logits(z: f64, t: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p() - t * z
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    params: Vec<(usize, Vec<f64>)>,
    leaves: Vec<(usize, Vec<f64>)>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for parameter `id`, summed over every node registered with
    /// that id; zeros if the parameter never reached the loss.
    pub fn param(&self, id: usize, shape: &[usize]) -> Tensor {
        let mut out = Tensor::zeros(shape);
        for (pid, g) in &self.params {
            if *pid == id {
                accumulate(out.data_mut(), g);
            }
        }
        out
    }

    /// Gradient with respect to a leaf node.
    pub fn wrt(&self, v: Var) -> Tensor {
        let mut out = Tensor::zeros(&self.shapes[v.0]);
        for (idx, g) in &self.leaves {
            if *idx == v.0 {
                accumulate(out.data_mut(), g);
            }
        }
        out
    }

    /// Dense gradients aligned with a parameter list.
    pub fn for_params(&self, params: &[Tensor]) -> Vec<Tensor> {
        params
            .iter()
            .enumerate()
            .map(|(i, p)| self.param(i, p.shape()))
            .collect()
    }
}
