//! Minimal reverse-mode differentiation over dense row-major matrices.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! replays it in reverse and accumulates parameter gradients.

use crate::params::ParamSet;

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    fn add_assign(&mut self, other: &Mat) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `a (n x k) * b (k x m)`
fn matmul(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.cols, b.rows, "matmul inner dimension");
    let mut out = Mat::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let o = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, &av) in a.row(i).iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (ov, bv) in o.iter_mut().zip(b.row(k)) {
                *ov += av * bv;
            }
        }
    }
    out
}

/// `a (n x k) * b^T` with `b (m x k)`
fn matmul_t(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.cols, b.cols, "matmul_t inner dimension");
    let mut out = Mat::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        for j in 0..b.rows {
            out.data[i * b.rows + j] = a.row(i).iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `a^T * b` with `a (n x k)`, `b (n x m)`
fn t_matmul(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.rows, b.rows, "t_matmul outer dimension");
    let mut out = Mat::zeros(a.cols, b.cols);
    for r in 0..a.rows {
        for (k, &av) in a.row(r).iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let o = &mut out.data[k * b.cols..(k + 1) * b.cols];
            for (ov, bv) in o.iter_mut().zip(b.row(r)) {
                *ov += av * bv;
            }
        }
    }
    out
}

/// Row-wise softmax; with `causal`, entry (i, j) is zero for j > i.
pub fn softmax_rows(x: &Mat, causal: bool) -> Mat {
    let mut out = Mat::zeros(x.rows, x.cols);
    for r in 0..x.rows {
        let limit = if causal { (r + 1).min(x.cols) } else { x.cols };
        let row = &x.row(r)[..limit];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for (o, e) in out.row_mut(r).iter_mut().zip(&exps) {
            *o = e / sum;
        }
    }
    out
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(usize),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Softmax(Var),
    Gelu(Var),
    LayerNorm { x: Var, gain: Var, bias: Var },
    Gather(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    MeanRows(Var),
    CrossEntropy(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Mat,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamSet,
    leaves: Vec<Option<Var>>,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            params,
            leaves: vec![None; params.len()],
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn input(&mut self, m: Mat) -> Var {
        self.push(m, Op::Input)
    }

    pub fn param(&mut self, idx: usize) -> Var {
        if let Some(v) = self.leaves[idx] {
            return v;
        }
        let t = self.params.get(idx);
        let v = self.push(Mat::from_vec(t.rows, t.cols, t.data.clone()), Op::Param(idx));
        self.leaves[idx] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = matmul(self.value(a), self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = matmul_t(self.value(a), self.value(b));
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!((x.rows, x.cols), (y.rows, y.cols), "add shapes");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p + q).collect();
        let v = Mat::from_vec(x.rows, x.cols, data);
        self.push(v, Op::Add(a, b))
    }

    /// Adds a `1 x m` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (x, b) = (self.value(a), self.value(bias));
        assert_eq!((b.rows, b.cols), (1, x.cols), "bias shape");
        let mut v = x.clone();
        for r in 0..v.rows {
            for (o, bv) in v.row_mut(r).iter_mut().zip(&b.data) {
                *o += bv;
            }
        }
        self.push(v, Op::AddRow(a, bias))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let x = self.value(a);
        let v = Mat::from_vec(x.rows, x.cols, x.data.iter().map(|p| p * s).collect());
        self.push(v, Op::Scale(a, s))
    }

    pub fn softmax(&mut self, a: Var, causal: bool) -> Var {
        let v = softmax_rows(self.value(a), causal);
        self.push(v, Op::Softmax(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = Mat::from_vec(x.rows, x.cols, x.data.iter().map(|&p| gelu(p)).collect());
        self.push(v, Op::Gelu(a))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let (xv, g, b) = (self.value(x), self.value(gain), self.value(bias));
        let n = xv.cols as f64;
        let mut out = Mat::zeros(xv.rows, xv.cols);
        for r in 0..xv.rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            for (c, o) in out.row_mut(r).iter_mut().enumerate() {
                *o = (row[c] - mean) * inv * g.data[c] + b.data[c];
            }
        }
        self.push(out, Op::LayerNorm { x, gain, bias })
    }

    /// Rows `idx` of `table`.
    pub fn gather(&mut self, table: Var, idx: &[usize]) -> Var {
        let t = self.value(table);
        let mut out = Mat::zeros(idx.len(), t.cols);
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(i));
        }
        self.push(out, Op::Gather(table, idx.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.cols, cols, "concat_rows widths");
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        self.push(Mat::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Mat::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.rows, rows, "concat_cols heights");
            for r in 0..rows {
                out.row_mut(r)[offset..offset + m.cols].copy_from_slice(m.row(r));
            }
            offset += m.cols;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        let mut out = Mat::zeros(x.rows, len);
        for r in 0..x.rows {
            out.row_mut(r).copy_from_slice(&x.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols(a, start))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = Mat::zeros(1, x.cols);
        for r in 0..x.rows {
            for (o, v) in out.data.iter_mut().zip(x.row(r)) {
                *o += v / x.rows as f64;
            }
        }
        self.push(out, Op::MeanRows(a))
    }

    /// Mean over rows of the softmax cross-entropy against `targets`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let x = self.value(logits);
        assert_eq!(x.rows, targets.len(), "one target per row");
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = x.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[t];
        }
        let v = Mat::from_vec(1, 1, vec![loss / targets.len() as f64]);
        self.push(v, Op::CrossEntropy(logits, targets.to_vec()))
    }

    /// Back-propagates `seed * d(output)` and adds the parameter gradients
    /// into `grads` (one buffer per tensor of the parameter set).
    pub fn backward(&self, output: Var, seed: f64, grads: &mut [Vec<f64>]) {
        let mut adj: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        let out = self.value(output);
        adj[output.0] = Some(Mat::from_vec(out.rows, out.cols, vec![seed; out.data.len()]));

        fn acc(adj: &mut [Option<Mat>], v: Var, g: &Mat) {
            match &mut adj[v.0] {
                Some(m) => m.add_assign(g),
                slot => *slot = Some(g.clone()),
            }
        }

        for i in (0..=output.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(idx) => {
                    for (d, s) in grads[*idx].iter_mut().zip(&g.data) {
                        *d += s;
                    }
                }
                Op::MatMul(a, b) => {
                    let da = matmul_t(&g, self.value(*b));
                    let db = t_matmul(self.value(*a), &g);
                    acc(&mut adj, *a, &da);
                    acc(&mut adj, *b, &db);
                }
                Op::MatMulT(a, b) => {
                    let da = matmul(&g, self.value(*b));
                    let db = t_matmul(&g, self.value(*a));
                    acc(&mut adj, *a, &da);
                    acc(&mut adj, *b, &db);
                }
                Op::Add(a, b) => {
                    acc(&mut adj, *a, &g);
                    acc(&mut adj, *b, &g);
                }
                Op::AddRow(a, bias) => {
                    let mut db = Mat::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (o, v) in db.data.iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    acc(&mut adj, *a, &g);
                    acc(&mut adj, *bias, &db);
                }
                Op::Scale(a, s) => {
                    let d = Mat::from_vec(g.rows, g.cols, g.data.iter().map(|v| v * s).collect());
                    acc(&mut adj, *a, &d);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut d = Mat::zeros(g.rows, g.cols);
                    for r in 0..g.rows {
                        let dot: f64 = y.row(r).iter().zip(g.row(r)).map(|(p, q)| p * q).sum();
                        for (c, o) in d.row_mut(r).iter_mut().enumerate() {
                            *o = y.row(r)[c] * (g.row(r)[c] - dot);
                        }
                    }
                    acc(&mut adj, *a, &d);
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let data = x.data.iter().zip(&g.data).map(|(&p, q)| gelu_grad(p) * q).collect();
                    acc(&mut adj, *a, &Mat::from_vec(g.rows, g.cols, data));
                }
                Op::LayerNorm { x, gain, bias } => {
                    let xv = self.value(*x);
                    let gv = self.value(*gain);
                    let n = xv.cols as f64;
                    let mut dx = Mat::zeros(xv.rows, xv.cols);
                    let mut dg = Mat::zeros(1, xv.cols);
                    let mut db = Mat::zeros(1, xv.cols);
                    for r in 0..xv.rows {
                        let row = xv.row(r);
                        let mean = row.iter().sum::<f64>() / n;
                        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                        let inv = 1.0 / (var + LN_EPS).sqrt();
                        let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv).collect();
                        let dxhat: Vec<f64> = g.row(r).iter().zip(&gv.data).map(|(d, w)| d * w).collect();
                        let m1 = dxhat.iter().sum::<f64>() / n;
                        let m2 = dxhat.iter().zip(&xhat).map(|(d, h)| d * h).sum::<f64>() / n;
                        for c in 0..xv.cols {
                            dg.data[c] += g.row(r)[c] * xhat[c];
                            db.data[c] += g.row(r)[c];
                            dx.row_mut(r)[c] = inv * (dxhat[c] - m1 - xhat[c] * m2);
                        }
                    }
                    acc(&mut adj, *x, &dx);
                    acc(&mut adj, *gain, &dg);
                    acc(&mut adj, *bias, &db);
                }
                Op::Gather(table, idx) => {
                    let t = self.value(*table);
                    let mut d = Mat::zeros(t.rows, t.cols);
                    for (r, &k) in idx.iter().enumerate() {
                        for (o, v) in d.row_mut(k).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    acc(&mut adj, *table, &d);
                }
                Op::ConcatRows(parts) => {
                    let mut row = 0;
                    for p in parts {
                        let m = self.value(*p);
                        let d = Mat::from_vec(
                            m.rows,
                            m.cols,
                            g.data[row * g.cols..(row + m.rows) * g.cols].to_vec(),
                        );
                        acc(&mut adj, *p, &d);
                        row += m.rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let m = self.value(*p);
                        let mut d = Mat::zeros(m.rows, m.cols);
                        for r in 0..m.rows {
                            d.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + m.cols]);
                        }
                        acc(&mut adj, *p, &d);
                        offset += m.cols;
                    }
                }
                Op::SliceCols(a, start) => {
                    let x = self.value(*a);
                    let mut d = Mat::zeros(x.rows, x.cols);
                    for r in 0..x.rows {
                        d.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                    }
                    acc(&mut adj, *a, &d);
                }
                Op::MeanRows(a) => {
                    let x = self.value(*a);
                    let mut d = Mat::zeros(x.rows, x.cols);
                    for r in 0..x.rows {
                        for (o, v) in d.row_mut(r).iter_mut().zip(&g.data) {
                            *o = v / x.rows as f64;
                        }
                    }
                    acc(&mut adj, *a, &d);
                }
                Op::CrossEntropy(logits, targets) => {
                    let x = self.value(*logits);
                    let mut d = softmax_rows(x, false);
                    let scale = g.data[0] / targets.len() as f64;
                    for (r, &t) in targets.iter().enumerate() {
                        d.row_mut(r)[t] -= 1.0;
                        for v in d.row_mut(r) {
                            *v *= scale;
                        }
                    }
                    acc(&mut adj, *logits, &d);
                }
            }
        }
    }
}
