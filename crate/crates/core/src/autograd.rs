//! Reverse-mode autodiff over `f64` matrices.
//!
//! A `Tape` is a flat list of nodes; every operation appends a node holding
//! its value and enough cached state to run its backward rule. Reductions
//! and matrix products use fixed loop orders (no BLAS dispatch), so forward
//! and backward passes are bit-reproducible for identical inputs.

use ndarray::Array2;

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub usize);

enum Op {
    Leaf,
    Matmul(usize, usize),
    Add(usize, usize),
    /// (L x D) + broadcast (1 x D)
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    /// Matrix times a 1x1 variable.
    MulScalarVar(usize, usize),
    Recip(usize),
    Exp(usize),
    Ln(usize),
    Gelu { x: usize, t: Mat },
    Sigmoid(usize),
    Transpose(usize),
    ConcatRows(Vec<usize>),
    SliceRows { x: usize, start: usize },
    ConcatCols(Vec<usize>),
    SliceCols { x: usize, start: usize },
    GatherRows { x: usize, idx: Vec<usize> },
    SumAll(usize),
    MeanAll(usize),
    SoftmaxRows(usize),
    LogSoftmaxRows { x: usize, probs: Mat },
    LayerNorm { x: usize, gamma: usize, beta: usize, xhat: Mat, rstd: Vec<f64> },
    RowL2Normalize { x: usize, norms: Vec<f64>, eps: f64 },
    Clamp { x: usize, lo: f64, hi: f64 },
    PickPerRow { x: usize, cols: Vec<usize> },
    BceWithLogitsMean { z: usize, targets: Vec<f64> },
}

struct Node {
    value: Mat,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }
}

/// Fixed-order dense matmul: the k-loop is always ascending per output
/// element, independent of vector width or CPU features.
pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (m, ka) = a.dim();
    let (kb, n) = b.dim();
    assert_eq!(ka, kb, "matmul shape mismatch: {m}x{ka} * {kb}x{n}");
    let mut out = Mat::zeros((m, n));
    for i in 0..m {
        let a_row = a.row(i);
        let a_row = a_row.as_slice().expect("a row not contiguous");
        let mut o_row = out.row_mut(i);
        let o_row = o_row.as_slice_mut().expect("out row not contiguous");
        for (k, &aik) in a_row.iter().enumerate() {
            let b_row = b.row(k);
            let b_row = b_row.as_slice().expect("b row not contiguous");
            for j in 0..n {
                o_row[j] += aik * b_row[j];
            }
        }
    }
    out
}

fn transpose(a: &Mat) -> Mat {
    let (m, n) = a.dim();
    let mut out = Mat::zeros((n, m));
    for i in 0..m {
        for j in 0..n {
            out[(j, i)] = a[(i, j)];
        }
    }
    out
}

pub fn gelu_scalar(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.dim(), (1, 1), "scalar() on non-1x1 value");
        m[(0, 0)]
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf)
    }

    pub fn leaf_scalar(&mut self, x: f64) -> Var {
        self.leaf(Mat::from_elem((1, 1), x))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = matmul(self.value(a), self.value(b));
        self.push(v, Op::Matmul(a.0, b.0))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a.0, b.0))
    }

    /// Broadcast-add a 1xD row to every row of an LxD matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.nrows(), 1, "add_row expects a 1xD row");
        let v = self.value(a) + r;
        self.push(v, Op::AddRow(a.0, row.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a.0, b.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).mapv(|x| x * c);
        self.push(v, Op::Scale(a.0, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).mapv(|x| x + c);
        self.push(v, Op::AddScalar(a.0))
    }

    /// Multiply a matrix by a 1x1 variable.
    pub fn mul_scalar_var(&mut self, a: Var, s: Var) -> Var {
        let sv = self.scalar(s);
        let v = self.value(a).mapv(|x| x * sv);
        self.push(v, Op::MulScalarVar(a.0, s.0))
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| 1.0 / x);
        self.push(v, Op::Recip(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::exp);
        self.push(v, Op::Exp(a.0))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::ln);
        self.push(v, Op::Ln(a.0))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        const C: f64 = 0.7978845608028654;
        let x = self.value(a);
        let t = x.mapv(|x| (C * (x + 0.044715 * x * x * x)).tanh());
        let mut value = x.clone();
        value.zip_mut_with(&t, |o, &tt| *o = 0.5 * *o * (1.0 + tt));
        self.push(value, Op::Gelu { x: a.0, t })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(v, Op::Sigmoid(a.0))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = transpose(self.value(a));
        self.push(v, Op::Transpose(a.0))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).ncols();
        let rows: usize = parts.iter().map(|p| self.value(*p).nrows()).sum();
        let mut v = Mat::zeros((rows, cols));
        let mut at = 0;
        for p in parts {
            let m = self.value(*p);
            assert_eq!(m.ncols(), cols, "concat_rows column mismatch");
            for i in 0..m.nrows() {
                for j in 0..cols {
                    v[(at + i, j)] = m[(i, j)];
                }
            }
            at += m.nrows();
        }
        self.push(v, Op::ConcatRows(parts.iter().map(|p| p.0).collect()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let m = self.value(a);
        assert!(start < end && end <= m.nrows());
        let v = m.slice(ndarray::s![start..end, ..]).to_owned();
        self.push(v, Op::SliceRows { x: a.0, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).nrows();
        let cols: usize = parts.iter().map(|p| self.value(*p).ncols()).sum();
        let mut v = Mat::zeros((rows, cols));
        let mut at = 0;
        for p in parts {
            let m = self.value(*p);
            assert_eq!(m.nrows(), rows, "concat_cols row mismatch");
            for i in 0..rows {
                for j in 0..m.ncols() {
                    v[(i, at + j)] = m[(i, j)];
                }
            }
            at += m.ncols();
        }
        self.push(v, Op::ConcatCols(parts.iter().map(|p| p.0).collect()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let m = self.value(a);
        assert!(start < end && end <= m.ncols());
        let v = m.slice(ndarray::s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols { x: a.0, start })
    }

    /// Row lookup with repetition allowed (embedding gather).
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let m = self.value(a);
        let mut v = Mat::zeros((idx.len(), m.ncols()));
        for (r, &i) in idx.iter().enumerate() {
            assert!(i < m.nrows(), "gather_rows index out of range");
            for j in 0..m.ncols() {
                v[(r, j)] = m[(i, j)];
            }
        }
        self.push(v, Op::GatherRows { x: a.0, idx: idx.to_vec() })
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let mut s = 0.0;
        for &x in self.value(a).iter() {
            s += x;
        }
        self.push(Mat::from_elem((1, 1), s), Op::SumAll(a.0))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let count = m.len() as f64;
        let mut s = 0.0;
        for &x in m.iter() {
            s += x;
        }
        self.push(Mat::from_elem((1, 1), s / count), Op::MeanAll(a.0))
    }

    /// Row-wise softmax; `allowed[i][j] == false` zeroes column j of row i.
    /// Every row must keep at least one allowed entry.
    pub fn softmax_rows(&mut self, a: Var, allowed: Option<&Array2<bool>>) -> Var {
        let x = self.value(a);
        let (m, n) = x.dim();
        if let Some(mask) = allowed {
            assert_eq!(mask.dim(), (m, n), "softmax mask shape mismatch");
        }
        let mut v = Mat::zeros((m, n));
        for i in 0..m {
            let mut hi = f64::NEG_INFINITY;
            for j in 0..n {
                if allowed.is_none_or(|a| a[(i, j)]) {
                    hi = hi.max(x[(i, j)]);
                }
            }
            assert!(hi.is_finite(), "softmax row {i} has no allowed entries");
            let mut z = 0.0;
            for j in 0..n {
                if allowed.is_none_or(|a| a[(i, j)]) {
                    let e = (x[(i, j)] - hi).exp();
                    v[(i, j)] = e;
                    z += e;
                }
            }
            for j in 0..n {
                v[(i, j)] /= z;
            }
        }
        self.push(v, Op::SoftmaxRows(a.0))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (m, n) = x.dim();
        let mut v = Mat::zeros((m, n));
        let mut probs = Mat::zeros((m, n));
        for i in 0..m {
            let mut hi = f64::NEG_INFINITY;
            for j in 0..n {
                hi = hi.max(x[(i, j)]);
            }
            let mut z = 0.0;
            for j in 0..n {
                z += (x[(i, j)] - hi).exp();
            }
            let lse = hi + z.ln();
            for j in 0..n {
                v[(i, j)] = x[(i, j)] - lse;
                probs[(i, j)] = v[(i, j)].exp();
            }
        }
        self.push(v, Op::LogSoftmaxRows { x: a.0, probs })
    }

    /// Per-row layer norm with learned gain/shift (both 1xD).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xm = self.value(x);
        let (m, n) = xm.dim();
        let g = self.value(gamma);
        let b = self.value(beta);
        assert_eq!(g.dim(), (1, n));
        assert_eq!(b.dim(), (1, n));
        let mut xhat = Mat::zeros((m, n));
        let mut rstd = vec![0.0; m];
        let mut v = Mat::zeros((m, n));
        for i in 0..m {
            let mut mean = 0.0;
            for j in 0..n {
                mean += xm[(i, j)];
            }
            mean /= n as f64;
            let mut var = 0.0;
            for j in 0..n {
                let d = xm[(i, j)] - mean;
                var += d * d;
            }
            var /= n as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd[i] = r;
            for j in 0..n {
                let xh = (xm[(i, j)] - mean) * r;
                xhat[(i, j)] = xh;
                v[(i, j)] = g[(0, j)] * xh + b[(0, j)];
            }
        }
        self.push(v, Op::LayerNorm { x: x.0, gamma: gamma.0, beta: beta.0, xhat, rstd })
    }

    /// Row-wise x / (||x|| + eps).
    pub fn row_l2_normalize(&mut self, x: Var, eps: f64) -> Var {
        let xm = self.value(x);
        let (m, n) = xm.dim();
        let mut norms = vec![0.0; m];
        let mut v = Mat::zeros((m, n));
        for i in 0..m {
            let mut s = 0.0;
            for j in 0..n {
                s += xm[(i, j)] * xm[(i, j)];
            }
            let norm = s.sqrt();
            norms[i] = norm;
            for j in 0..n {
                v[(i, j)] = xm[(i, j)] / (norm + eps);
            }
        }
        self.push(v, Op::RowL2Normalize { x: x.0, norms, eps })
    }

    /// Clamp with zero gradient outside the open interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(x).mapv(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp { x: x.0, lo, hi })
    }

    /// out[i] = a[i, cols[i]], as an n x 1 column.
    pub fn pick_per_row(&mut self, a: Var, cols: &[usize]) -> Var {
        let m = self.value(a);
        assert_eq!(cols.len(), m.nrows());
        let mut v = Mat::zeros((cols.len(), 1));
        for (i, &c) in cols.iter().enumerate() {
            assert!(c < m.ncols(), "pick_per_row column out of range");
            v[(i, 0)] = m[(i, c)];
        }
        self.push(v, Op::PickPerRow { x: a.0, cols: cols.to_vec() })
    }

    /// Numerically stable mean binary cross-entropy on logits (n x 1).
    pub fn bce_with_logits_mean(&mut self, z: Var, targets: &[f64]) -> Var {
        let zm = self.value(z);
        assert_eq!(zm.dim(), (targets.len(), 1));
        let mut s = 0.0;
        for (i, &y) in targets.iter().enumerate() {
            let zi = zm[(i, 0)];
            s += zi.max(0.0) - zi * y + (1.0 + (-zi.abs()).exp()).ln();
        }
        let v = Mat::from_elem((1, 1), s / targets.len() as f64);
        self.push(v, Op::BceWithLogitsMean { z: z.0, targets: targets.to_vec() })
    }

    /// Reverse pass from a 1x1 loss node. Returns per-node gradients.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::from_elem((1, 1), 1.0));

        for id in (0..=loss.0).rev() {
            let Some(dy) = grads[id].take() else { continue };
            self.accumulate(id, &dy, &mut grads);
            grads[id] = Some(dy);
        }
        Gradients { grads }
    }

    fn accumulate(&self, id: usize, dy: &Mat, grads: &mut [Option<Mat>]) {
        let add_to = |grads: &mut [Option<Mat>], target: usize, delta: Mat| {
            match &mut grads[target] {
                Some(g) => *g += &delta,
                slot @ None => *slot = Some(delta),
            }
        };
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                add_to(grads, *a, matmul(dy, &transpose(bv)));
                add_to(grads, *b, matmul(&transpose(av), dy));
            }
            Op::Add(a, b) => {
                add_to(grads, *a, dy.clone());
                add_to(grads, *b, dy.clone());
            }
            Op::AddRow(a, row) => {
                add_to(grads, *a, dy.clone());
                let mut dr = Mat::zeros((1, dy.ncols()));
                for i in 0..dy.nrows() {
                    for j in 0..dy.ncols() {
                        dr[(0, j)] += dy[(i, j)];
                    }
                }
                add_to(grads, *row, dr);
            }
            Op::Sub(a, b) => {
                add_to(grads, *a, dy.clone());
                add_to(grads, *b, dy.mapv(|x| -x));
            }
            Op::Mul(a, b) => {
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                add_to(grads, *a, dy * bv);
                add_to(grads, *b, dy * av);
            }
            Op::Scale(a, c) => add_to(grads, *a, dy.mapv(|x| x * c)),
            Op::AddScalar(a) => add_to(grads, *a, dy.clone()),
            Op::MulScalarVar(a, s) => {
                let sv = self.nodes[*s].value[(0, 0)];
                let av = &self.nodes[*a].value;
                add_to(grads, *a, dy.mapv(|x| x * sv));
                let mut ds = 0.0;
                for (d, x) in dy.iter().zip(av.iter()) {
                    ds += d * x;
                }
                add_to(grads, *s, Mat::from_elem((1, 1), ds));
            }
            Op::Recip(a) => {
                let av = &self.nodes[*a].value;
                let mut dx = dy.clone();
                dx.zip_mut_with(av, |d, &x| *d = -*d / (x * x));
                add_to(grads, *a, dx);
            }
            Op::Exp(a) => {
                let out = &self.nodes[id].value;
                add_to(grads, *a, dy * out);
            }
            Op::Ln(a) => {
                let av = &self.nodes[*a].value;
                let mut dx = dy.clone();
                dx.zip_mut_with(av, |d, &x| *d /= x);
                add_to(grads, *a, dx);
            }
            Op::Gelu { x, t } => {
                const C: f64 = 0.7978845608028654;
                let xv = &self.nodes[*x].value;
                let mut dx = dy.clone();
                for ((d, &xx), &tt) in dx.iter_mut().zip(xv.iter()).zip(t.iter()) {
                    let inner = C * (1.0 + 3.0 * 0.044715 * xx * xx);
                    let g = 0.5 * (1.0 + tt) + 0.5 * xx * (1.0 - tt * tt) * inner;
                    *d *= g;
                }
                add_to(grads, *x, dx);
            }
            Op::Sigmoid(a) => {
                let out = &self.nodes[id].value;
                let mut dx = dy.clone();
                dx.zip_mut_with(out, |d, &s| *d *= s * (1.0 - s));
                add_to(grads, *a, dx);
            }
            Op::Transpose(a) => add_to(grads, *a, transpose(dy)),
            Op::ConcatRows(parts) => {
                let mut at = 0;
                for p in parts {
                    let rows = self.nodes[*p].value.nrows();
                    let d = dy.slice(ndarray::s![at..at + rows, ..]).to_owned();
                    add_to(grads, *p, d);
                    at += rows;
                }
            }
            Op::SliceRows { x, start } => {
                let src = &self.nodes[*x].value;
                let mut dx = Mat::zeros(src.dim());
                for i in 0..dy.nrows() {
                    for j in 0..dy.ncols() {
                        dx[(start + i, j)] = dy[(i, j)];
                    }
                }
                add_to(grads, *x, dx);
            }
            Op::ConcatCols(parts) => {
                let mut at = 0;
                for p in parts {
                    let cols = self.nodes[*p].value.ncols();
                    let d = dy.slice(ndarray::s![.., at..at + cols]).to_owned();
                    add_to(grads, *p, d);
                    at += cols;
                }
            }
            Op::SliceCols { x, start } => {
                let src = &self.nodes[*x].value;
                let mut dx = Mat::zeros(src.dim());
                for i in 0..dy.nrows() {
                    for j in 0..dy.ncols() {
                        dx[(i, start + j)] = dy[(i, j)];
                    }
                }
                add_to(grads, *x, dx);
            }
            Op::GatherRows { x, idx } => {
                let src = &self.nodes[*x].value;
                let mut dx = Mat::zeros(src.dim());
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..dy.ncols() {
                        dx[(i, j)] += dy[(r, j)];
                    }
                }
                add_to(grads, *x, dx);
            }
            Op::SumAll(a) => {
                let shape = self.nodes[*a].value.dim();
                add_to(grads, *a, Mat::from_elem(shape, dy[(0, 0)]));
            }
            Op::MeanAll(a) => {
                let shape = self.nodes[*a].value.dim();
                let count = (shape.0 * shape.1) as f64;
                add_to(grads, *a, Mat::from_elem(shape, dy[(0, 0)] / count));
            }
            Op::SoftmaxRows(x) => {
                let p = &self.nodes[id].value;
                let (m, n) = p.dim();
                let mut dx = Mat::zeros((m, n));
                for i in 0..m {
                    let mut dot = 0.0;
                    for j in 0..n {
                        dot += dy[(i, j)] * p[(i, j)];
                    }
                    for j in 0..n {
                        dx[(i, j)] = p[(i, j)] * (dy[(i, j)] - dot);
                    }
                }
                add_to(grads, *x, dx);
            }
            Op::LogSoftmaxRows { x, probs } => {
                let (m, n) = probs.dim();
                let mut dx = Mat::zeros((m, n));
                for i in 0..m {
                    let mut rowsum = 0.0;
                    for j in 0..n {
                        rowsum += dy[(i, j)];
                    }
                    for j in 0..n {
                        dx[(i, j)] = dy[(i, j)] - probs[(i, j)] * rowsum;
                    }
                }
                add_to(grads, *x, dx);
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let g = &self.nodes[*gamma].value;
                let (m, n) = xhat.dim();
                let mut dgamma = Mat::zeros((1, n));
                let mut dbeta = Mat::zeros((1, n));
                let mut dx = Mat::zeros((m, n));
                for i in 0..m {
                    let mut mean_dxhat = 0.0;
                    let mut mean_dxhat_xhat = 0.0;
                    for j in 0..n {
                        let d = dy[(i, j)];
                        dgamma[(0, j)] += d * xhat[(i, j)];
                        dbeta[(0, j)] += d;
                        let dxh = d * g[(0, j)];
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * xhat[(i, j)];
                    }
                    mean_dxhat /= n as f64;
                    mean_dxhat_xhat /= n as f64;
                    for j in 0..n {
                        let dxh = dy[(i, j)] * g[(0, j)];
                        dx[(i, j)] = rstd[i] * (dxh - mean_dxhat - xhat[(i, j)] * mean_dxhat_xhat);
                    }
                }
                add_to(grads, *x, dx);
                add_to(grads, *gamma, dgamma);
                add_to(grads, *beta, dbeta);
            }
            Op::RowL2Normalize { x, norms, eps } => {
                let xv = &self.nodes[*x].value;
                let (m, n) = xv.dim();
                let mut dx = Mat::zeros((m, n));
                for i in 0..m {
                    let norm = norms[i];
                    let denom = norm + eps;
                    let mut dot = 0.0;
                    for j in 0..n {
                        dot += dy[(i, j)] * xv[(i, j)];
                    }
                    for j in 0..n {
                        let mut d = dy[(i, j)] / denom;
                        if norm > 0.0 {
                            d -= xv[(i, j)] * dot / (norm * denom * denom);
                        }
                        dx[(i, j)] = d;
                    }
                }
                add_to(grads, *x, dx);
            }
            Op::Clamp { x, lo, hi } => {
                let xv = &self.nodes[*x].value;
                let mut dx = dy.clone();
                dx.zip_mut_with(xv, |d, &x| {
                    if x <= *lo || x >= *hi {
                        *d = 0.0;
                    }
                });
                add_to(grads, *x, dx);
            }
            Op::PickPerRow { x, cols } => {
                let src = &self.nodes[*x].value;
                let mut dx = Mat::zeros(src.dim());
                for (i, &c) in cols.iter().enumerate() {
                    dx[(i, c)] += dy[(i, 0)];
                }
                add_to(grads, *x, dx);
            }
            Op::BceWithLogitsMean { z, targets } => {
                let zv = &self.nodes[*z].value;
                let n = targets.len() as f64;
                let mut dz = Mat::zeros(zv.dim());
                for (i, &y) in targets.iter().enumerate() {
                    let s = 1.0 / (1.0 + (-zv[(i, 0)]).exp());
                    dz[(i, 0)] = dy[(0, 0)] * (s - y) / n;
                }
                add_to(grads, *z, dz);
            }
        }
    }
}

/// Helper: build a matrix from rows of slices (used by tests and encoders).
pub fn mat_from_rows(rows: &[Vec<f64>]) -> Mat {
    let m = rows.len();
    let n = if m == 0 { 0 } else { rows[0].len() };
    let mut out = Mat::zeros((m, n));
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.len(), n);
        for (j, &x) in r.iter().enumerate() {
            out[(i, j)] = x;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Mat {
        Mat::from_shape_fn((m, n), |_| rng.random_range(-1.0..1.0))
    }

    /// Central finite differences of `f` w.r.t. entry (i, j) of input k.
    fn fd_check(inputs: &[Mat], f: impl Fn(&mut Tape, &[Var]) -> Var, tol: f64) {
        let h = 1e-5;
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
        let loss = f(&mut tape, &vars);
        let grads = tape.backward(loss);

        for (k, input) in inputs.iter().enumerate() {
            let g = grads.get(vars[k]).cloned().unwrap_or_else(|| Mat::zeros(input.dim()));
            for i in 0..input.nrows() {
                for j in 0..input.ncols() {
                    let eval = |delta: f64| {
                        let mut shifted: Vec<Mat> = inputs.to_vec();
                        shifted[k][(i, j)] += delta;
                        let mut t = Tape::new();
                        let vs: Vec<Var> = shifted.iter().map(|m| t.leaf(m.clone())).collect();
                        let l = f(&mut t, &vs);
                        t.scalar(l)
                    };
                    let num = (eval(h) - eval(-h)) / (2.0 * h);
                    let ana = g[(i, j)];
                    let denom = num.abs().max(ana.abs()).max(1e-8);
                    assert!(
                        (num - ana).abs() / denom <= tol,
                        "input {k} entry ({i},{j}): numeric {num} vs analytic {ana}"
                    );
                }
            }
        }
    }

    #[test]
    fn matmul_matches_reference() {
        let a = mat_from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let b = mat_from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]);
        let c = matmul(&a, &b);
        assert_eq!(c, mat_from_rows(&[vec![19.0, 22.0], vec![43.0, 50.0]]));
    }

    #[test]
    fn grad_matmul_add_mul() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = rand_mat(&mut rng, 3, 4);
        let b = rand_mat(&mut rng, 4, 2);
        let c = rand_mat(&mut rng, 3, 2);
        fd_check(&[a, b, c], |t, v| {
            let p = t.matmul(v[0], v[1]);
            let q = t.add(p, v[2]);
            let r = t.mul(q, v[2]);
            t.sum_all(r)
        }, 1e-6);
    }

    #[test]
    fn grad_softmax_logsoftmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_mat(&mut rng, 3, 5);
        fd_check(&[x.clone()], |t, v| {
            let s = t.softmax_rows(v[0], None);
            let w = t.mul(s, s);
            t.sum_all(w)
        }, 1e-6);
        fd_check(&[x], |t, v| {
            let s = t.log_softmax_rows(v[0]);
            let p = t.pick_per_row(s, &[1, 0, 4]);
            let m = t.mean_all(p);
            t.scale(m, -1.0)
        }, 1e-6);
    }

    #[test]
    fn grad_masked_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_mat(&mut rng, 2, 4);
        let mut allowed = Array2::from_elem((2, 4), true);
        allowed[(0, 3)] = false;
        allowed[(1, 0)] = false;
        allowed[(1, 1)] = false;
        fd_check(&[x], |t, v| {
            let s = t.softmax_rows(v[0], Some(&allowed));
            let w = t.mul(s, s);
            t.sum_all(w)
        }, 1e-6);
    }

    #[test]
    fn grad_layer_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_mat(&mut rng, 3, 6);
        let g = rand_mat(&mut rng, 1, 6);
        let b = rand_mat(&mut rng, 1, 6);
        fd_check(&[x, g, b], |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2], 1e-6);
            let w = t.mul(y, y);
            t.sum_all(w)
        }, 1e-5);
    }

    #[test]
    fn grad_gelu_sigmoid_exp_recip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_mat(&mut rng, 2, 3).mapv(|v| v + 2.5); // keep recip away from 0
        fd_check(&[x], |t, v| {
            let a = t.gelu(v[0]);
            let b = t.sigmoid(a);
            let c = t.exp(b);
            let d = t.recip(c);
            t.sum_all(d)
        }, 1e-6);
    }

    #[test]
    fn grad_l2_normalize_and_scalar_mul() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_mat(&mut rng, 3, 4);
        let s = rand_mat(&mut rng, 1, 1).mapv(|v| v + 2.0);
        let c = rand_mat(&mut rng, 3, 4);
        fd_check(&[x, s], move |t, v| {
            let y = t.row_l2_normalize(v[0], 1e-12);
            let z = t.mul_scalar_var(y, v[1]);
            let cv = t.leaf(c.clone());
            let w = t.mul(z, cv);
            t.sum_all(w)
        }, 1e-6);
    }

    #[test]
    fn grad_concat_slice_gather_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = rand_mat(&mut rng, 2, 3);
        let b = rand_mat(&mut rng, 3, 3);
        fd_check(&[a, b], |t, v| {
            let c = t.concat_rows(&[v[0], v[1]]);
            let g = t.gather_rows(c, &[0, 4, 4, 2]);
            let s = t.slice_cols(g, 1, 3);
            let tr = t.transpose(s);
            let sq = t.mul(tr, tr);
            t.sum_all(sq)
        }, 1e-6);
        let c = rand_mat(&mut rng, 4, 2);
        let d = rand_mat(&mut rng, 4, 3);
        fd_check(&[c, d], |t, v| {
            let cc = t.concat_cols(&[v[0], v[1]]);
            let sr = t.slice_rows(cc, 1, 3);
            let sq = t.mul(sr, sr);
            t.sum_all(sq)
        }, 1e-6);
    }

    #[test]
    fn grad_bce_and_clamp() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let z = rand_mat(&mut rng, 4, 1);
        fd_check(&[z], |t, v| {
            t.bce_with_logits_mean(v[0], &[1.0, 0.0, 0.0, 1.0])
        }, 1e-6);
        let x = mat_from_rows(&[vec![0.5, -3.0, 3.0]]);
        let mut tape = Tape::new();
        let v = tape.leaf(x);
        let c = tape.clamp(v, -1.0, 1.0);
        let l = tape.sum_all(c);
        let grads = tape.backward(l);
        let g = grads.get(v).unwrap();
        assert_eq!(g[(0, 0)], 1.0);
        assert_eq!(g[(0, 1)], 0.0);
        assert_eq!(g[(0, 2)], 0.0);
    }

    #[test]
    fn bce_at_zero_is_ln2() {
        let mut t = Tape::new();
        let z = t.leaf(Mat::zeros((3, 1)));
        let l = t.bce_with_logits_mean(z, &[1.0, 0.0, 1.0]);
        assert!((t.scalar(l) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn shared_node_grads_accumulate() {
        // y = x * x via two references to the same node
        let mut t = Tape::new();
        let x = t.leaf(Mat::from_elem((1, 1), 3.0));
        let y = t.mul(x, x);
        let l = t.sum_all(y);
        let g = t.backward(l);
        assert!((g.get(x).unwrap()[(0, 0)] - 6.0).abs() < 1e-12);
    }
}
