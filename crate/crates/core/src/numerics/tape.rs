//! Reverse-mode gradient tape over dense matrices.
//!
//! Nodes are appended in evaluation order and a node can only reference
//! nodes that already exist, so the append order is a topological order and
//! the backward sweep is a single reverse pass.

use crate::error::{shape_err, Error, Result};
use crate::numerics::matrix::{
    matmul_transposed_unchecked, matmul_unchecked, softmax_in_place, transposed_matmul_unchecked,
};
use crate::numerics::Matrix;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Hadamard(Var, Var),
    MulConst(Var, Matrix),
    Scale(Var, f64),
    Softmax(Var),
    CausalMask(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Matrix, inv_std: Vec<f64> },
    Gelu(Var),
    Gather { table: Var, ids: Vec<usize> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Matrix },
    Sum(Var),
    Mean(Vec<Var>),
}

struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    adjoints: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`; `None` if `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.adjoints.get(v.0).and_then(|a| a.as_ref())
    }

    /// Gradient w.r.t. `v`, or zeros shaped like `like` when unreachable.
    pub fn get_or_zeros(&self, v: Var, like: &Matrix) -> Matrix {
        self.get(v).cloned().unwrap_or_else(|| Matrix::zeros(like.rows(), like.cols()))
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 >= self.nodes.len() {
            return Err(Error::Input(format!("variable {} does not belong to this tape", v.0)));
        }
        Ok(())
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.rows() {
            return shape_err(format!("matmul {:?} x {:?}", x.shape(), y.shape()));
        }
        let out = matmul_unchecked(x, y);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.cols() {
            return shape_err(format!("matmul_t {:?} x {:?}^T", x.shape(), y.shape()));
        }
        let out = matmul_transposed_unchecked(x, y);
        Ok(self.push(out, Op::MatMulT(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds the `1 x C` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (x, r) = (self.value(a), self.value(b));
        if r.rows() != 1 || r.cols() != x.cols() {
            return shape_err(format!("add_row {:?} + {:?}", x.shape(), r.shape()));
        }
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (o, &bv) in out.row_mut(i).iter_mut().zip(r.row(0)) {
                *o += bv;
            }
        }
        Ok(self.push(out, Op::AddRow(a, b)))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let out = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(out, Op::Hadamard(a, b)))
    }

    /// Entrywise product with a constant; no gradient flows into `c`.
    pub fn mul_const(&mut self, a: Var, c: Matrix) -> Result<Var> {
        self.check(a)?;
        let out = self.value(a).hadamard(&c)?;
        Ok(self.push(out, Op::MulConst(a, c)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.check(a)?;
        let out = self.value(a).scale(s);
        Ok(self.push(out, Op::Scale(a, s)))
    }

    /// Row-wise softmax. `-inf` entries (masked logits) get probability 0.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let mut out = self.value(a).clone();
        for i in 0..out.rows() {
            softmax_in_place(out.row_mut(i));
        }
        Ok(self.push(out, Op::Softmax(a)))
    }

    /// Sets entries above the diagonal to `-inf`.
    pub fn causal_mask(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let x = self.value(a);
        if x.rows() > x.cols() {
            return shape_err(format!("causal mask on {:?}", x.shape()));
        }
        let mut out = x.clone();
        for i in 0..out.rows() {
            for v in &mut out.row_mut(i)[i + 1..] {
                *v = f64::NEG_INFINITY;
            }
        }
        Ok(self.push(out, Op::CausalMask(a)))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        self.check(x)?;
        self.check(gamma)?;
        self.check(beta)?;
        let (xv, g, b) = (self.value(x), self.value(gamma), self.value(beta));
        let c = xv.cols();
        if g.shape() != (1, c) || b.shape() != (1, c) {
            return shape_err(format!(
                "layer_norm on {:?} with gamma {:?} beta {:?}",
                xv.shape(),
                g.shape(),
                b.shape()
            ));
        }
        let mut xhat = Matrix::zeros(xv.rows(), c);
        let mut out = Matrix::zeros(xv.rows(), c);
        let mut inv_std = Vec::with_capacity(xv.rows());
        for i in 0..xv.rows() {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[(i, j)] = h;
                out[(i, j)] = g[(0, j)] * h + b[(0, j)];
            }
        }
        Ok(self.push(out, Op::LayerNorm { x, gamma, beta, xhat, inv_std }))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let out = self.value(a).map(|x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()));
        Ok(self.push(out, Op::Gelu(a)))
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.check(table)?;
        let t = self.value(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::Input(format!("row id {bad} out of range for {} rows", t.rows())));
        }
        let c = t.cols();
        let mut data = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            data.extend_from_slice(t.row(i));
        }
        let out = Matrix::from_vec_unchecked(ids.len(), c, data);
        Ok(self.push(out, Op::Gather { table, ids: ids.to_vec() }))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.check(x)?;
        let out = self.value(x).slice_cols(start, len)?;
        Ok(self.push(out, Op::SliceCols { x, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return shape_err("concat of zero matrices");
        };
        for &p in parts {
            self.check(p)?;
        }
        let rows = self.value(first).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return shape_err("concat_cols with unequal row counts");
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let mut off = 0;
            for &p in parts {
                let r = self.value(p).row(i);
                out.row_mut(i)[off..off + r.len()].copy_from_slice(r);
                off += r.len();
            }
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Mean next-token cross-entropy of `logits` (rows = positions) against `targets`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        self.check(logits)?;
        let z = self.value(logits);
        if z.rows() != targets.len() || targets.is_empty() {
            return shape_err(format!("cross_entropy: {} rows vs {} targets", z.rows(), targets.len()));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= z.cols()) {
            return Err(Error::Input(format!("target {bad} out of range for {} classes", z.cols())));
        }
        let mut probs = z.clone();
        let mut loss = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = z.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[t];
            softmax_in_place(probs.row_mut(i));
        }
        let out = Matrix::from_vec_unchecked(1, 1, vec![loss / targets.len() as f64]);
        Ok(self.push(out, Op::CrossEntropy { logits, targets: targets.to_vec(), probs }))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let s = self.value(a).data().iter().sum();
        Ok(self.push(Matrix::from_vec_unchecked(1, 1, vec![s]), Op::Sum(a)))
    }

    /// Average of `1 x 1` nodes.
    pub fn mean_scalars(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return shape_err("mean of zero scalars");
        }
        let mut s = 0.0;
        for &x in xs {
            self.check(x)?;
            let v = self.value(x);
            if v.shape() != (1, 1) {
                return shape_err(format!("mean_scalars got {:?}", v.shape()));
            }
            s += v[(0, 0)];
        }
        let out = Matrix::from_vec_unchecked(1, 1, vec![s / xs.len() as f64]);
        Ok(self.push(out, Op::Mean(xs.to_vec())))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check(loss)?;
        if self.value(loss).shape() != (1, 1) {
            return shape_err(format!("backward needs a scalar loss, got {:?}", self.value(loss).shape()));
        }
        let mut adj: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = matmul_transposed_unchecked(&g, self.value(*b));
                    let db = transposed_matmul_unchecked(self.value(*a), &g);
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::MatMulT(a, b) => {
                    // out = a bᵀ: da = g b, db = gᵀ a
                    let da = matmul_unchecked(&g, self.value(*b));
                    let db = transposed_matmul_unchecked(&g, self.value(*a));
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g.clone());
                }
                Op::AddRow(a, b) => {
                    let mut db = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (d, &v) in db.row_mut(0).iter_mut().zip(g.row(i)) {
                            *d += v;
                        }
                    }
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, db);
                }
                Op::Hadamard(a, b) => {
                    let da = g.zip_unchecked(self.value(*b), |x, y| x * y);
                    let db = g.zip_unchecked(self.value(*a), |x, y| x * y);
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::MulConst(a, c) => {
                    accumulate(&mut adj, *a, g.zip_unchecked(c, |x, y| x * y));
                }
                Op::Scale(a, s) => {
                    accumulate(&mut adj, *a, g.scale(*s));
                }
                Op::CausalMask(a) => {
                    let mut dx = g.clone();
                    for i in 0..dx.rows() {
                        for v in &mut dx.row_mut(i)[i + 1..] {
                            *v = 0.0;
                        }
                    }
                    accumulate(&mut adj, *a, dx);
                }
                Op::Softmax(a) => {
                    let p = &node.value;
                    let mut dx = Matrix::zeros(p.rows(), p.cols());
                    for i in 0..p.rows() {
                        let (pr, gr) = (p.row(i), g.row(i));
                        let inner: f64 = pr.iter().zip(gr).map(|(x, y)| x * y).sum();
                        for (j, d) in dx.row_mut(i).iter_mut().enumerate() {
                            *d = pr[j] * (gr[j] - inner);
                        }
                    }
                    accumulate(&mut adj, *a, dx);
                }
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    let gm = self.value(*gamma);
                    let (n, c) = xhat.shape();
                    let mut dg = Matrix::zeros(1, c);
                    let mut db = Matrix::zeros(1, c);
                    let mut dx = Matrix::zeros(n, c);
                    for i in 0..n {
                        let (gr, hr) = (g.row(i), xhat.row(i));
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..c {
                            dg[(0, j)] += gr[j] * hr[j];
                            db[(0, j)] += gr[j];
                            let dh = gr[j] * gm[(0, j)];
                            s1 += dh;
                            s2 += dh * hr[j];
                        }
                        let k = inv_std[i] / c as f64;
                        for j in 0..c {
                            let dh = gr[j] * gm[(0, j)];
                            dx[(i, j)] = k * (c as f64 * dh - s1 - hr[j] * s2);
                        }
                    }
                    accumulate(&mut adj, *x, dx);
                    accumulate(&mut adj, *gamma, dg);
                    accumulate(&mut adj, *beta, db);
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let d = x.map(|x| {
                        let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
                        0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
                    });
                    accumulate(&mut adj, *a, g.zip_unchecked(&d, |u, v| u * v));
                }
                Op::Gather { table, ids } => {
                    let t = self.value(*table);
                    let mut dt = Matrix::zeros(t.rows(), t.cols());
                    for (r, &id) in ids.iter().enumerate() {
                        for (d, &v) in dt.row_mut(id).iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    accumulate(&mut adj, *table, dt);
                }
                Op::SliceCols { x, start } => {
                    let xv = self.value(*x);
                    let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                    for i in 0..g.rows() {
                        dx.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                    }
                    accumulate(&mut adj, *x, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let c = self.value(p).cols();
                        accumulate(&mut adj, p, g.slice_cols(off, c)?);
                        off += c;
                    }
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let scale = g[(0, 0)] / targets.len() as f64;
                    let mut dz = probs.clone();
                    for (i, &t) in targets.iter().enumerate() {
                        dz[(i, t)] -= 1.0;
                    }
                    accumulate(&mut adj, *logits, dz.scale(scale));
                }
                Op::Sum(a) => {
                    let v = self.value(*a);
                    accumulate(&mut adj, *a, Matrix::filled(v.rows(), v.cols(), g[(0, 0)]));
                }
                Op::Mean(xs) => {
                    let share = g[(0, 0)] / xs.len() as f64;
                    for &x in xs {
                        accumulate(&mut adj, x, Matrix::filled(1, 1, share));
                    }
                }
            }
            // Keep adjoints of leaves (and anything the caller may query).
            adj[idx] = Some(g);
        }
        Ok(Gradients { adjoints: adj })
    }
}

fn accumulate(adj: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut adj[v.0] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}
