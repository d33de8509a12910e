use std::rc::Rc;

use super::kernels::{matmul_into, matmul_t_into, t_matmul_into};
use super::{Tensor, TensorError};

/// Handle to a node on a [`Tape`].
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
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddRow(usize, usize),
    MulRow(usize, usize),
    MatMul(usize, usize),
    MatMulT(usize, usize),
    Transpose(usize),
    Reshape(usize),
    GatherRows(usize, Rc<[usize]>),
    ScatterRows(usize, usize, Rc<[usize]>),
    ColSlice(usize, usize),
    ConcatCols(Vec<usize>),
    MaskedSoftmax(usize),
    RmsNorm(usize, usize),
    L2Normalize(usize),
    Gelu(usize),
    Sum(usize),
    Mean(usize),
    CrossEntropy(usize, Rc<[u32]>),
    Mse(usize, usize),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    /// Per-op saved values: row scales for the norms, probabilities for
    /// cross entropy.
    aux: Vec<f64>,
}

/// Records operations for one forward pass and runs them backward.
///
/// Leaf gradients persist and accumulate across [`Tape::backward`] calls
/// until [`Tape::zero_grad`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Vec<f64>>,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch { op, left: a.shape().to_vec(), right: b.shape().to_vec() }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool, aux: Vec<f64>) -> Var {
        self.nodes.push(Node { value, op, needs_grad, aux });
        self.grads.push(Vec::new());
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].needs_grad)
    }

    /// A leaf that receives gradients.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true, Vec::new())
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false, Vec::new())
    }

    pub fn param(&mut self, t: Tensor, trainable: bool) -> Var {
        self.push(t, Op::Leaf, trainable, Vec::new())
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Accumulated gradient, or `None` if nothing reached `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        let g = &self.grads[v.0];
        (!g.is_empty()).then_some(g.as_slice())
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.clear();
        }
    }

    fn elementwise(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        mk: fn(usize, usize) -> Op,
    ) -> Result<Var, TensorError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(mismatch(op, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor { shape: ta.shape().to_vec(), data };
        let needs = self.needs(&[a.0, b.0]);
        Ok(self.push(value, mk(a.0, b.0), needs, Vec::new()))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.elementwise("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = &self.nodes[a.0].value;
        let value = Tensor { shape: t.shape().to_vec(), data: t.data().iter().map(|x| x * c).collect() };
        let needs = self.needs(&[a.0]);
        self.push(value, Op::Scale(a.0, c), needs, Vec::new())
    }

    fn row_op(
        &mut self,
        op: &'static str,
        a: Var,
        row: Var,
        f: impl Fn(f64, f64) -> f64,
        mk: fn(usize, usize) -> Op,
    ) -> Result<Var, TensorError> {
        let (ta, tr) = (&self.nodes[a.0].value, &self.nodes[row.0].value);
        let c = ta.cols();
        if tr.len() != c {
            return Err(mismatch(op, ta, tr));
        }
        let data = ta.data().iter().enumerate().map(|(i, &x)| f(x, tr.data()[i % c])).collect();
        let value = Tensor { shape: ta.shape().to_vec(), data };
        let needs = self.needs(&[a.0, row.0]);
        Ok(self.push(value, mk(a.0, row.0), needs, Vec::new()))
    }

    /// Adds a length-`cols` vector to every row.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        self.row_op("add_row", a, row, |x, y| x + y, Op::AddRow)
    }

    /// Multiplies every row elementwise by a length-`cols` vector.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        self.row_op("mul_row", a, row, |x, y| x * y, Op::MulRow)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        if ta.shape().len() != 2 || tb.shape().len() != 2 || tb.rows() != k {
            return Err(mismatch("matmul", ta, tb));
        }
        let mut data = vec![0.0; m * n];
        matmul_into(&mut data, ta.data(), tb.data(), m, k, n);
        let needs = self.needs(&[a.0, b.0]);
        Ok(self.push(Tensor { shape: vec![m, n], data }, Op::MatMul(a.0, b.0), needs, Vec::new()))
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
        if ta.shape().len() != 2 || tb.shape().len() != 2 || tb.cols() != k {
            return Err(mismatch("matmul_t", ta, tb));
        }
        let mut data = vec![0.0; m * n];
        matmul_t_into(&mut data, ta.data(), tb.data(), m, k, n);
        let needs = self.needs(&[a.0, b.0]);
        Ok(self.push(Tensor { shape: vec![m, n], data }, Op::MatMulT(a.0, b.0), needs, Vec::new()))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let t = &self.nodes[a.0].value;
        if t.shape().len() != 2 {
            return Err(TensorError::ShapeMismatch { op: "transpose", left: t.shape().to_vec(), right: vec![] });
        }
        let (r, c) = (t.rows(), t.cols());
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = t.data()[i * c + j];
            }
        }
        let needs = self.needs(&[a.0]);
        Ok(self.push(Tensor { shape: vec![c, r], data }, Op::Transpose(a.0), needs, Vec::new()))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let t = &self.nodes[a.0].value;
        if shape.iter().product::<usize>() != t.len() {
            return Err(TensorError::ShapeMismatch { op: "reshape", left: t.shape().to_vec(), right: shape.to_vec() });
        }
        let value = Tensor { shape: shape.to_vec(), data: t.data().to_vec() };
        let needs = self.needs(&[a.0]);
        Ok(self.push(value, Op::Reshape(a.0), needs, Vec::new()))
    }

    /// Rows `idx` of `a`, in order; repeats allowed.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var, TensorError> {
        let t = &self.nodes[a.0].value;
        let (r, c) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= r {
                return Err(TensorError::IndexOutOfRange { op: "gather_rows", index: i, len: r });
            }
            data.extend_from_slice(t.row(i));
        }
        let needs = self.needs(&[a.0]);
        Ok(self.push(Tensor { shape: vec![idx.len(), c], data }, Op::GatherRows(a.0, idx.into()), needs, Vec::new()))
    }

    /// Copy of `base` with row `idx[i]` replaced by row `i` of `src`.
    pub fn scatter_rows(&mut self, base: Var, src: Var, idx: &[usize]) -> Result<Var, TensorError> {
        let (tb, ts) = (&self.nodes[base.0].value, &self.nodes[src.0].value);
        let (r, c) = (tb.rows(), tb.cols());
        if ts.cols() != c || ts.rows() != idx.len() || tb.shape().len() != 2 {
            return Err(mismatch("scatter_rows", tb, ts));
        }
        let mut seen = vec![false; r];
        let mut data = tb.data().to_vec();
        for (i, &dst) in idx.iter().enumerate() {
            if dst >= r {
                return Err(TensorError::IndexOutOfRange { op: "scatter_rows", index: dst, len: r });
            }
            if std::mem::replace(&mut seen[dst], true) {
                return Err(TensorError::DuplicateRow(dst));
            }
            data[dst * c..(dst + 1) * c].copy_from_slice(ts.row(i));
        }
        let needs = self.needs(&[base.0, src.0]);
        Ok(self.push(Tensor { shape: vec![r, c], data }, Op::ScatterRows(base.0, src.0, idx.into()), needs, Vec::new()))
    }

    pub fn col_slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let t = &self.nodes[a.0].value;
        let (r, c) = (t.rows(), t.cols());
        if start + len > c || t.shape().len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "col_slice",
                left: t.shape().to_vec(),
                right: vec![start, len],
            });
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&t.row(i)[start..start + len]);
        }
        let needs = self.needs(&[a.0]);
        Ok(self.push(Tensor { shape: vec![r, len], data }, Op::ColSlice(a.0, start), needs, Vec::new()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts.first().ok_or(TensorError::Empty("concat_cols"))?;
        let r = self.nodes[first.0].value.rows();
        let mut c = 0;
        for p in parts {
            let t = &self.nodes[p.0].value;
            if t.rows() != r || t.shape().len() != 2 {
                return Err(mismatch("concat_cols", &self.nodes[first.0].value, t));
            }
            c += t.cols();
        }
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for p in parts {
                data.extend_from_slice(self.nodes[p.0].value.row(i));
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let needs = self.needs(&ids);
        Ok(self.push(Tensor { shape: vec![r, c], data }, Op::ConcatCols(ids), needs, Vec::new()))
    }

    /// Row-wise softmax over the entries where `allowed` is true; the rest
    /// are exactly zero. `allowed` is row-major with the shape of `scores`.
    pub fn masked_softmax(&mut self, scores: Var, allowed: &[bool]) -> Result<Var, TensorError> {
        let t = &self.nodes[scores.0].value;
        let (r, c) = (t.rows(), t.cols());
        if allowed.len() != r * c {
            return Err(TensorError::ShapeMismatch {
                op: "masked_softmax",
                left: t.shape().to_vec(),
                right: vec![allowed.len()],
            });
        }
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let row = t.row(i);
            let ok = &allowed[i * c..(i + 1) * c];
            let max = row.iter().zip(ok).filter(|(_, &a)| a).map(|(&x, _)| x).fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(TensorError::AllMaskedRow(i));
            }
            let out = &mut data[i * c..(i + 1) * c];
            let mut total = 0.0;
            for j in 0..c {
                if ok[j] {
                    out[j] = (row[j] - max).exp();
                    total += out[j];
                }
            }
            for v in out.iter_mut() {
                *v /= total;
            }
        }
        let needs = self.needs(&[scores.0]);
        Ok(self.push(Tensor { shape: vec![r, c], data }, Op::MaskedSoftmax(scores.0), needs, Vec::new()))
    }

    /// `x / sqrt(mean(x²) + eps) * gain`, per row.
    pub fn rmsnorm(&mut self, x: Var, gain: Var, eps: f64) -> Result<Var, TensorError> {
        let (tx, tg) = (&self.nodes[x.0].value, &self.nodes[gain.0].value);
        let (r, c) = (tx.rows(), tx.cols());
        if tg.len() != c {
            return Err(mismatch("rmsnorm", tx, tg));
        }
        let mut inv = Vec::with_capacity(r);
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = tx.row(i);
            let s = 1.0 / (row.iter().map(|v| v * v).sum::<f64>() / c as f64 + eps).sqrt();
            inv.push(s);
            data.extend(row.iter().zip(tg.data()).map(|(v, g)| v * s * g));
        }
        let needs = self.needs(&[x.0, gain.0]);
        Ok(self.push(Tensor { shape: tx.shape().to_vec(), data }, Op::RmsNorm(x.0, gain.0), needs, inv))
    }

    /// Scales each row to unit Euclidean norm. All-zero rows stay zero.
    pub fn l2_normalize(&mut self, x: Var) -> Var {
        let t = &self.nodes[x.0].value;
        let (r, c) = (t.rows(), t.cols());
        let mut inv = Vec::with_capacity(r);
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = t.row(i);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let s = if norm > 0.0 { 1.0 / norm } else { 0.0 };
            inv.push(s);
            data.extend(row.iter().map(|v| v * s));
        }
        let needs = self.needs(&[x.0]);
        self.push(Tensor { shape: t.shape().to_vec(), data }, Op::L2Normalize(x.0), needs, inv)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let t = &self.nodes[x.0].value;
        let data = t
            .data()
            .iter()
            .map(|&v| 0.5 * v * (1.0 + (SQRT_2_OVER_PI * (v + GELU_CUBIC * v * v * v)).tanh()))
            .collect();
        let value = Tensor { shape: t.shape().to_vec(), data };
        let needs = self.needs(&[x.0]);
        self.push(value, Op::Gelu(x.0), needs, Vec::new())
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.data().iter().sum();
        let needs = self.needs(&[x.0]);
        self.push(Tensor::scalar(s), Op::Sum(x.0), needs, Vec::new())
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = &self.nodes[x.0].value;
        if t.is_empty() {
            return Err(TensorError::Empty("mean"));
        }
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        let needs = self.needs(&[x.0]);
        Ok(self.push(Tensor::scalar(m), Op::Mean(x.0), needs, Vec::new()))
    }

    /// Mean over rows of `logsumexp(row) - row[target]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[u32]) -> Result<Var, TensorError> {
        let t = &self.nodes[logits.0].value;
        let (r, c) = (t.rows(), t.cols());
        if targets.len() != r || t.shape().len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                left: t.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        if r == 0 {
            return Err(TensorError::Empty("cross_entropy"));
        }
        let mut probs = Vec::with_capacity(r * c);
        let mut loss = 0.0;
        for (i, &target) in targets.iter().enumerate() {
            let row = t.row(i);
            if target as usize >= c {
                return Err(TensorError::IndexOutOfRange { op: "cross_entropy", index: target as usize, len: c });
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + total.ln();
            loss += lse - row[target as usize];
            probs.extend(row.iter().map(|v| (v - lse).exp()));
        }
        let needs = self.needs(&[logits.0]);
        Ok(self.push(Tensor::scalar(loss / r as f64), Op::CrossEntropy(logits.0, targets.into()), needs, probs))
    }

    /// Mean of squared differences.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(mismatch("mse", ta, tb));
        }
        if ta.is_empty() {
            return Err(TensorError::Empty("mse"));
        }
        let s: f64 = ta.data().iter().zip(tb.data()).map(|(x, y)| (x - y) * (x - y)).sum();
        let needs = self.needs(&[a.0, b.0]);
        Ok(self.push(Tensor::scalar(s / ta.len() as f64), Op::Mse(a.0, b.0), needs, Vec::new()))
    }

    /// Same value, cut off from the graph.
    pub fn stop_grad(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.clone();
        self.constant(value)
    }

    /// Backpropagates from the scalar `loss`, adding into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let lt = &self.nodes[loss.0].value;
        if lt.len() != 1 {
            return Err(TensorError::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut work: Vec<Vec<f64>> = vec![Vec::new(); loss.0 + 1];
        work[loss.0] = vec![1.0];
        for id in (0..=loss.0).rev() {
            let g = std::mem::take(&mut work[id]);
            if g.is_empty() || !self.nodes[id].needs_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[id].op {
                let slot = &mut self.grads[id];
                if slot.is_empty() {
                    *slot = g;
                } else {
                    for (s, v) in slot.iter_mut().zip(&g) {
                        *s += v;
                    }
                }
                continue;
            }
            self.propagate(id, &g, &mut work);
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: &[f64], work: &mut [Vec<f64>]) {
        let nodes = &self.nodes;
        let node = &nodes[id];
        macro_rules! slot {
            ($i:expr) => {
                grad_slot(nodes, work, $i)
            };
        }
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for (i, sign) in [(*a, 1.0), (*b, 1.0)] {
                    if let Some(ga) = slot!(i) {
                        ga.iter_mut().zip(g).for_each(|(x, y)| *x += sign * y);
                    }
                }
            }
            Op::Sub(a, b) => {
                for (i, sign) in [(*a, 1.0), (*b, -1.0)] {
                    if let Some(ga) = slot!(i) {
                        ga.iter_mut().zip(g).for_each(|(x, y)| *x += sign * y);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (nodes[*a].value.data(), nodes[*b].value.data());
                if let Some(ga) = slot!(*a) {
                    for i in 0..g.len() {
                        ga[i] += g[i] * vb[i];
                    }
                }
                if let Some(gb) = slot!(*b) {
                    for i in 0..g.len() {
                        gb[i] += g[i] * va[i];
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = slot!(*a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += c * y);
                }
            }
            Op::AddRow(a, r) => {
                let c = nodes[*r].value.len();
                if let Some(ga) = slot!(*a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(gr) = slot!(*r) {
                    for (i, y) in g.iter().enumerate() {
                        gr[i % c] += y;
                    }
                }
            }
            Op::MulRow(a, r) => {
                let (va, vr) = (nodes[*a].value.data(), nodes[*r].value.data());
                let c = vr.len();
                if let Some(ga) = slot!(*a) {
                    for (i, y) in g.iter().enumerate() {
                        ga[i] += y * vr[i % c];
                    }
                }
                if let Some(gr) = slot!(*r) {
                    for (i, y) in g.iter().enumerate() {
                        gr[i % c] += y * va[i];
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (&nodes[*a].value, &nodes[*b].value);
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if let Some(ga) = slot!(*a) {
                    matmul_t_into(ga, g, tb.data(), m, n, k);
                }
                if let Some(gb) = slot!(*b) {
                    t_matmul_into(gb, ta.data(), g, m, k, n);
                }
            }
            Op::MatMulT(a, b) => {
                let (ta, tb) = (&nodes[*a].value, &nodes[*b].value);
                let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
                if let Some(ga) = slot!(*a) {
                    matmul_into(ga, g, tb.data(), m, n, k);
                }
                if let Some(gb) = slot!(*b) {
                    t_matmul_into(gb, g, ta.data(), m, n, k);
                }
            }
            Op::Transpose(a) => {
                let t = &nodes[*a].value;
                let (r, c) = (t.rows(), t.cols());
                if let Some(ga) = slot!(*a) {
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = slot!(*a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
            Op::GatherRows(a, idx) => {
                let c = nodes[*a].value.cols();
                if let Some(ga) = slot!(*a) {
                    for (i, &src) in idx.iter().enumerate() {
                        for j in 0..c {
                            ga[src * c + j] += g[i * c + j];
                        }
                    }
                }
            }
            Op::ScatterRows(base, src, idx) => {
                let c = nodes[*base].value.cols();
                if let Some(gb) = slot!(*base) {
                    let mut replaced = vec![false; nodes[*base].value.rows()];
                    for &d in idx.iter() {
                        replaced[d] = true;
                    }
                    for (row, &skip) in replaced.iter().enumerate() {
                        if !skip {
                            for j in 0..c {
                                gb[row * c + j] += g[row * c + j];
                            }
                        }
                    }
                }
                if let Some(gs) = slot!(*src) {
                    for (i, &d) in idx.iter().enumerate() {
                        for j in 0..c {
                            gs[i * c + j] += g[d * c + j];
                        }
                    }
                }
            }
            Op::ColSlice(a, start) => {
                let c = nodes[*a].value.cols();
                let len = node.value.cols();
                if let Some(ga) = slot!(*a) {
                    for i in 0..node.value.rows() {
                        for j in 0..len {
                            ga[i * c + start + j] += g[i * len + j];
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = nodes[p].value.cols();
                    if let Some(gp) = slot!(p) {
                        for i in 0..node.value.rows() {
                            for j in 0..w {
                                gp[i * w + j] += g[i * total + offset + j];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::MaskedSoftmax(a) => {
                let y = node.value.data();
                let c = node.value.cols();
                if let Some(ga) = slot!(*a) {
                    for i in 0..node.value.rows() {
                        let (yr, gr) = (&y[i * c..(i + 1) * c], &g[i * c..(i + 1) * c]);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            ga[i * c + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::RmsNorm(x, gain) => {
                let (tx, w) = (&nodes[*x].value, nodes[*gain].value.data());
                let c = tx.cols();
                let inv = &node.aux;
                if let Some(gx) = slot!(*x) {
                    for i in 0..tx.rows() {
                        let xr = tx.row(i);
                        let gr = &g[i * c..(i + 1) * c];
                        let s = inv[i];
                        let dot: f64 = (0..c).map(|j| gr[j] * w[j] * xr[j]).sum();
                        for j in 0..c {
                            gx[i * c + j] += s * gr[j] * w[j] - xr[j] * s * s * s * dot / c as f64;
                        }
                    }
                }
                if let Some(gw) = slot!(*gain) {
                    for i in 0..tx.rows() {
                        let xr = tx.row(i);
                        for j in 0..c {
                            gw[j] += g[i * c + j] * xr[j] * inv[i];
                        }
                    }
                }
            }
            Op::L2Normalize(x) => {
                let y = node.value.data();
                let c = node.value.cols();
                if let Some(gx) = slot!(*x) {
                    for i in 0..node.value.rows() {
                        let (yr, gr) = (&y[i * c..(i + 1) * c], &g[i * c..(i + 1) * c]);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        let s = node.aux[i];
                        for j in 0..c {
                            gx[i * c + j] += s * (gr[j] - yr[j] * dot);
                        }
                    }
                }
            }
            Op::Gelu(x) => {
                let vx = nodes[*x].value.data();
                if let Some(gx) = slot!(*x) {
                    for i in 0..g.len() {
                        let v = vx[i];
                        let t = (SQRT_2_OVER_PI * (v + GELU_CUBIC * v * v * v)).tanh();
                        let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * v * v);
                        gx[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = slot!(*x) {
                    gx.iter_mut().for_each(|v| *v += g[0]);
                }
            }
            Op::Mean(x) => {
                if let Some(gx) = slot!(*x) {
                    let n = gx.len() as f64;
                    gx.iter_mut().for_each(|v| *v += g[0] / n);
                }
            }
            Op::CrossEntropy(x, targets) => {
                let c = nodes[*x].value.cols();
                let r = targets.len() as f64;
                if let Some(gx) = slot!(*x) {
                    for (i, &t) in targets.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == t as usize { 1.0 } else { 0.0 };
                            gx[i * c + j] += g[0] * (node.aux[i * c + j] - onehot) / r;
                        }
                    }
                }
            }
            Op::Mse(a, b) => {
                let (va, vb) = (nodes[*a].value.data(), nodes[*b].value.data());
                let n = va.len() as f64;
                for (i, sign) in [(*a, 1.0), (*b, -1.0)] {
                    if let Some(gi) = slot!(i) {
                        for j in 0..va.len() {
                            gi[j] += sign * g[0] * 2.0 * (va[j] - vb[j]) / n;
                        }
                    }
                }
            }
        }
    }
}

/// Gradient accumulator of node `i`, allocated on first use, or `None` if
/// `i` takes no gradient.
fn grad_slot<'w>(nodes: &[Node], work: &'w mut [Vec<f64>], i: usize) -> Option<&'w mut Vec<f64>> {
    if !nodes[i].needs_grad {
        return None;
    }
    let w = &mut work[i];
    if w.is_empty() {
        *w = vec![0.0; nodes[i].value.len()];
    }
    Some(w)
}
