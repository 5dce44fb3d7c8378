//! Dense row-major `f64` matrices and a small reverse-mode tape.
//!
//! Every value on the tape is a 2-D [`Matrix`]. Operations are evaluated
//! eagerly when pushed; [`Tape::backward`] walks the nodes in reverse and
//! accumulates parameter gradients into a [`Gradients`] buffer. Nodes built
//! only from constants are never differentiated.

use std::fmt;

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix({}x{})", self.rows, self.cols)
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length does not match shape");
        Self { rows, cols, data }
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        let cols = data.len();
        Self { rows: 1, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self { rows: rows.len(), cols, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!(self.shape(), other.shape(), "shape mismatch in add_assign");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    /// `self × other`.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul inner dimension mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        let n = other.cols;
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * n..(k + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self × otherᵀ`.
    pub fn matmul_t(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul_t inner dimension mismatch");
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        out
    }

    /// `selfᵀ × other`.
    pub fn t_matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "t_matmul inner dimension mismatch");
        let mut out = Matrix::zeros(self.cols, other.cols);
        let n = other.cols;
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * n..(i + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Position of a trainable tensor inside a parameter set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Per-parameter gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<Matrix>,
}

impl Gradients {
    pub fn zeros_like(params: &[Matrix]) -> Self {
        Self { grads: params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect() }
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.grads[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Matrix> {
        self.grads.iter()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.grads {
            g.scale_assign(s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(Matrix::is_finite)
    }

    fn accumulate(&mut self, id: ParamId, g: &Matrix) {
        self.grads[id.0].add_assign(g);
    }
}

enum Op {
    Const,
    Param(ParamId),
    Gather { table: ParamId, ids: Vec<usize> },
    Add(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Matrix, rstd: Vec<f64> },
    Gelu(Var),
    Softmax(Var),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Dropout { x: Var, mask: Vec<f64> },
    SegmentMean { x: Var, segments: Vec<(usize, usize)> },
    NormalizeRows { x: Var, eps: f64, norms: Vec<f64> },
    Clamp { x: Var, lo: f64, hi: f64 },
    ColMax { x: Var, arg: Vec<usize> },
    ColMean(Var),
    PlaceCol { base: Var, value: Var, col: usize },
    SoftmaxXent { logits: Var, target: usize, tau: f64, probs: Vec<f64> },
    Sum(Var),
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Recording of a forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

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

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Const, false)
    }

    pub fn param(&mut self, id: ParamId, value: &Matrix) -> Var {
        self.push(value.clone(), Op::Param(id), true)
    }

    /// Rows `ids` of an embedding table.
    pub fn gather(&mut self, table_id: ParamId, table: &Matrix, ids: &[usize]) -> Var {
        let mut out = Matrix::zeros(ids.len(), table.cols());
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(table.row(id));
        }
        self.push(out, Op::Gather { table: table_id, ids: ids.to_vec() }, true)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Add(a, b), ng)
    }

    /// `x + bias` with a `1×c` bias broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let b = self.value(bias);
        assert_eq!(b.rows(), 1, "bias must be a row vector");
        assert_eq!(b.cols(), self.value(x).cols(), "bias width mismatch");
        let mut out = self.value(x).clone();
        let bias_row = b.row(0).to_vec();
        for i in 0..out.rows() {
            for (o, bv) in out.row_mut(i).iter_mut().zip(&bias_row) {
                *o += bv;
            }
        }
        let ng = self.needs(x) || self.needs(bias);
        self.push(out, Op::AddBias(x, bias), ng)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let mut out = self.value(x).clone();
        out.scale_assign(s);
        let ng = self.needs(x);
        self.push(out, Op::Scale(x, s), ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    /// `a × bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul_t(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::MatMulT(a, b), ng)
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` (both `1×c`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let mut xhat = Matrix::zeros(rows, cols);
        let mut rstd = Vec::with_capacity(rows);
        for i in 0..rows {
            let r = xv.row(i);
            let mean = r.iter().sum::<f64>() / cols as f64;
            let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let s = 1.0 / (var + LN_EPS).sqrt();
            rstd.push(s);
            for (h, v) in xhat.row_mut(i).iter_mut().zip(r) {
                *h = (v - mean) * s;
            }
        }
        let g = self.value(gamma).row(0);
        let b = self.value(beta).row(0);
        let mut out = xhat.clone();
        for i in 0..rows {
            for ((o, gv), bv) in out.row_mut(i).iter_mut().zip(g).zip(b) {
                *o = *o * gv + bv;
            }
        }
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(out, Op::LayerNorm { x, gamma, beta, xhat, rstd }, ng)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            let u = GELU_C * (*v + 0.044715 * *v * *v * *v);
            *v = 0.5 * *v * (1.0 + u.tanh());
        }
        let ng = self.needs(x);
        self.push(out, Op::Gelu(x), ng)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let ng = self.needs(x);
        self.push(out, Op::Softmax(x), ng)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        assert!(start + len <= xv.cols(), "column slice out of range");
        let mut out = Matrix::zeros(xv.rows(), len);
        for i in 0..xv.rows() {
            out.row_mut(i).copy_from_slice(&xv.row(i)[start..start + len]);
        }
        let ng = self.needs(x);
        self.push(out, Op::SliceCols { x, start }, ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows, "concat row mismatch");
            for i in 0..rows {
                out.row_mut(i)[offset..offset + pv.cols()].copy_from_slice(pv.row(i));
            }
            offset += pv.cols();
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols(), cols, "concat column mismatch");
            data.extend_from_slice(pv.data());
        }
        let out = Matrix::from_vec(data.len() / cols.max(1), cols, data);
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(out, Op::ConcatRows(parts.to_vec()), ng)
    }

    /// Elementwise multiply by a fixed mask (already scaled by `1/(1-p)`).
    pub fn dropout(&mut self, x: Var, mask: Vec<f64>) -> Var {
        let mut out = self.value(x).clone();
        assert_eq!(out.data().len(), mask.len(), "dropout mask size mismatch");
        for (o, m) in out.data_mut().iter_mut().zip(&mask) {
            *o *= m;
        }
        let ng = self.needs(x);
        self.push(out, Op::Dropout { x, mask }, ng)
    }

    /// One output row per `[start, end)` segment: the mean of those rows of `x`.
    pub fn segment_mean(&mut self, x: Var, segments: &[(usize, usize)]) -> Var {
        let xv = self.value(x);
        let mut out = Matrix::zeros(segments.len(), xv.cols());
        for (k, &(s, e)) in segments.iter().enumerate() {
            assert!(s < e && e <= xv.rows(), "invalid pooling segment");
            let inv = 1.0 / (e - s) as f64;
            let o = out.row_mut(k);
            for r in s..e {
                for (ov, xv) in o.iter_mut().zip(xv.row(r)) {
                    *ov += xv;
                }
            }
            for ov in o.iter_mut() {
                *ov *= inv;
            }
        }
        let ng = self.needs(x);
        self.push(out, Op::SegmentMean { x, segments: segments.to_vec() }, ng)
    }

    /// `x / max(‖x‖, eps)` per row.
    pub fn normalize_rows(&mut self, x: Var, eps: f64) -> Var {
        let mut out = self.value(x).clone();
        let mut norms = Vec::with_capacity(out.rows());
        for i in 0..out.rows() {
            let n = norm(out.row(i));
            norms.push(n);
            let d = n.max(eps);
            for v in out.row_mut(i) {
                *v /= d;
            }
        }
        let ng = self.needs(x);
        self.push(out, Op::NormalizeRows { x, eps, norms }, ng)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v = v.clamp(lo, hi);
        }
        let ng = self.needs(x);
        self.push(out, Op::Clamp { x, lo, hi }, ng)
    }

    /// `1×c` column maxima. Ties resolve to the lowest row index.
    pub fn col_max(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        assert!(xv.rows() > 0, "col_max over zero rows");
        let mut out = Matrix::zeros(1, xv.cols());
        let mut arg = vec![0usize; xv.cols()];
        out.row_mut(0).copy_from_slice(xv.row(0));
        for i in 1..xv.rows() {
            for (j, &v) in xv.row(i).iter().enumerate() {
                if v > out.data[j] {
                    out.data[j] = v;
                    arg[j] = i;
                }
            }
        }
        let ng = self.needs(x);
        self.push(out, Op::ColMax { x, arg }, ng)
    }

    /// `1×c` column means.
    pub fn col_mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        assert!(xv.rows() > 0, "col_mean over zero rows");
        let mut out = Matrix::zeros(1, xv.cols());
        for i in 0..xv.rows() {
            for (o, v) in out.data.iter_mut().zip(xv.row(i)) {
                *o += v;
            }
        }
        let inv = 1.0 / xv.rows() as f64;
        out.scale_assign(inv);
        let ng = self.needs(x);
        self.push(out, Op::ColMean(x), ng)
    }

    /// Copy of `base` with column `col` replaced by the single column `value`.
    pub fn place_col(&mut self, base: Var, value: Var, col: usize) -> Var {
        let mut out = self.value(base).clone();
        let vv = self.value(value);
        assert_eq!(vv.cols(), 1, "placed value must be a single column");
        assert_eq!(vv.rows(), out.rows(), "placed column height mismatch");
        for i in 0..out.rows() {
            out.set(i, col, vv.get(i, 0));
        }
        let ng = self.needs(base) || self.needs(value);
        self.push(out, Op::PlaceCol { base, value, col }, ng)
    }

    /// `-log softmax(logits / tau)[target]` over a `1×N` row.
    /// Entries equal to `-inf` are excluded from the normalizer.
    pub fn softmax_xent(&mut self, logits: Var, target: usize, tau: f64) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), 1, "cross-entropy expects a single row of logits");
        let (loss, probs) = xent_forward(lv.row(0), target, tau);
        let ng = self.needs(logits);
        self.push(Matrix::from_vec(1, 1, vec![loss]), Op::SoftmaxXent { logits, target, tau, probs }, ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum::<f64>();
        let ng = self.needs(x);
        self.push(Matrix::from_vec(1, 1, vec![s]), Op::Sum(x), ng)
    }

    /// Back-propagate from the scalar `loss`, adding parameter gradients into `grads`.
    pub fn backward(&self, loss: Var, grads: &mut Gradients) {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward needs a scalar loss");
        let mut adj: Vec<Option<Matrix>> = Vec::with_capacity(self.nodes.len());
        adj.resize_with(self.nodes.len(), || None);
        adj[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = adj[idx].take() else { continue };
            self.propagate(node, &g, &mut adj, grads);
        }
    }

    fn propagate(&self, node: &Node, g: &Matrix, adj: &mut [Option<Matrix>], grads: &mut Gradients) {
        let send = |adj: &mut [Option<Matrix>], v: Var, m: Matrix| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut adj[v.0] {
                Some(acc) => acc.add_assign(&m),
                slot @ None => *slot = Some(m),
            }
        };
        match &node.op {
            Op::Const => {}
            Op::Param(id) => grads.accumulate(*id, g),
            Op::Gather { table, ids } => {
                let tg = &mut grads.grads[table.0];
                for (r, &id) in ids.iter().enumerate() {
                    for (t, v) in tg.row_mut(id).iter_mut().zip(g.row(r)) {
                        *t += v;
                    }
                }
            }
            Op::Add(a, b) => {
                send(adj, *a, g.clone());
                send(adj, *b, g.clone());
            }
            Op::AddBias(x, bias) => {
                send(adj, *x, g.clone());
                if self.needs(*bias) {
                    let mut bg = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (b, v) in bg.data.iter_mut().zip(g.row(i)) {
                            *b += v;
                        }
                    }
                    send(adj, *bias, bg);
                }
            }
            Op::Scale(x, s) => {
                let mut m = g.clone();
                m.scale_assign(*s);
                send(adj, *x, m);
            }
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    send(adj, *a, g.matmul_t(self.value(*b)));
                }
                if self.needs(*b) {
                    send(adj, *b, self.value(*a).t_matmul(g));
                }
            }
            Op::MatMulT(a, b) => {
                if self.needs(*a) {
                    send(adj, *a, g.matmul(self.value(*b)));
                }
                if self.needs(*b) {
                    send(adj, *b, g.t_matmul(self.value(*a)));
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let gam = self.value(*gamma).row(0);
                let cols = g.cols();
                if self.needs(*gamma) || self.needs(*beta) {
                    let mut gg = Matrix::zeros(1, cols);
                    let mut bg = Matrix::zeros(1, cols);
                    for i in 0..g.rows() {
                        for j in 0..cols {
                            gg.data[j] += g.get(i, j) * xhat.get(i, j);
                            bg.data[j] += g.get(i, j);
                        }
                    }
                    send(adj, *gamma, gg);
                    send(adj, *beta, bg);
                }
                if self.needs(*x) {
                    let n = cols as f64;
                    let mut dx = Matrix::zeros(g.rows(), cols);
                    for i in 0..g.rows() {
                        let xh = xhat.row(i);
                        let dxhat: Vec<f64> = g.row(i).iter().zip(gam).map(|(a, b)| a * b).collect();
                        let sum_d: f64 = dxhat.iter().sum();
                        let sum_dx: f64 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum();
                        let s = rstd[i] / n;
                        for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
                            *o = s * (n * dxhat[j] - sum_d - xh[j] * sum_dx);
                        }
                    }
                    send(adj, *x, dx);
                }
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                let mut dx = g.clone();
                for (d, &v) in dx.data_mut().iter_mut().zip(xv.data()) {
                    let u = GELU_C * (v + 0.044715 * v * v * v);
                    let th = u.tanh();
                    let du = GELU_C * (1.0 + 3.0 * 0.044715 * v * v);
                    *d *= 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du;
                }
                send(adj, *x, dx);
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let mut dx = Matrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let yr = y.row(i);
                    let gr = g.row(i);
                    let s = dot(yr, gr);
                    for ((d, &yv), &gv) in dx.row_mut(i).iter_mut().zip(yr).zip(gr) {
                        *d = yv * (gv - s);
                    }
                }
                send(adj, *x, dx);
            }
            Op::SliceCols { x, start } => {
                let xv = self.value(*x);
                let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                for i in 0..g.rows() {
                    dx.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                }
                send(adj, *x, dx);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.needs(p) {
                        let mut dp = Matrix::zeros(g.rows(), w);
                        for i in 0..g.rows() {
                            dp.row_mut(i).copy_from_slice(&g.row(i)[offset..offset + w]);
                        }
                        send(adj, p, dp);
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).data().len();
                    if self.needs(p) {
                        let (r, c) = self.value(p).shape();
                        send(adj, p, Matrix::from_vec(r, c, g.data()[offset..offset + n].to_vec()));
                    }
                    offset += n;
                }
            }
            Op::Dropout { x, mask } => {
                let mut dx = g.clone();
                for (d, m) in dx.data_mut().iter_mut().zip(mask) {
                    *d *= m;
                }
                send(adj, *x, dx);
            }
            Op::SegmentMean { x, segments } => {
                let xv = self.value(*x);
                let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                for (k, &(s, e)) in segments.iter().enumerate() {
                    let inv = 1.0 / (e - s) as f64;
                    for r in s..e {
                        for (d, v) in dx.row_mut(r).iter_mut().zip(g.row(k)) {
                            *d += v * inv;
                        }
                    }
                }
                send(adj, *x, dx);
            }
            Op::NormalizeRows { x, eps, norms } => {
                let y = &node.value;
                let mut dx = Matrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let gr = g.row(i);
                    if norms[i] > *eps {
                        let yr = y.row(i);
                        let proj = dot(yr, gr);
                        for ((d, &yv), &gv) in dx.row_mut(i).iter_mut().zip(yr).zip(gr) {
                            *d = (gv - yv * proj) / norms[i];
                        }
                    } else {
                        for (d, &gv) in dx.row_mut(i).iter_mut().zip(gr) {
                            *d = gv / eps;
                        }
                    }
                }
                send(adj, *x, dx);
            }
            Op::Clamp { x, lo, hi } => {
                let xv = self.value(*x);
                let mut dx = g.clone();
                for (d, &v) in dx.data_mut().iter_mut().zip(xv.data()) {
                    if v < *lo || v > *hi {
                        *d = 0.0;
                    }
                }
                send(adj, *x, dx);
            }
            Op::ColMax { x, arg } => {
                let xv = self.value(*x);
                let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                for (j, &r) in arg.iter().enumerate() {
                    dx.set(r, j, g.get(0, j));
                }
                send(adj, *x, dx);
            }
            Op::ColMean(x) => {
                let xv = self.value(*x);
                let inv = 1.0 / xv.rows() as f64;
                let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                for i in 0..xv.rows() {
                    for (d, v) in dx.row_mut(i).iter_mut().zip(g.row(0)) {
                        *d = v * inv;
                    }
                }
                send(adj, *x, dx);
            }
            Op::PlaceCol { base, value, col } => {
                if self.needs(*base) {
                    let mut db = g.clone();
                    for i in 0..db.rows() {
                        db.set(i, *col, 0.0);
                    }
                    send(adj, *base, db);
                }
                if self.needs(*value) {
                    let mut dv = Matrix::zeros(g.rows(), 1);
                    for i in 0..g.rows() {
                        dv.set(i, 0, g.get(i, *col));
                    }
                    send(adj, *value, dv);
                }
            }
            Op::SoftmaxXent { logits, target, tau, probs } => {
                let scale = g.get(0, 0) / tau;
                let mut dl = Matrix::zeros(1, probs.len());
                for (j, (d, p)) in dl.data_mut().iter_mut().zip(probs).enumerate() {
                    let indicator = if j == *target { 1.0 } else { 0.0 };
                    *d = (p - indicator) * scale;
                }
                send(adj, *logits, dl);
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                send(adj, *x, Matrix::filled(xv.rows(), xv.cols(), g.get(0, 0)));
            }
        }
    }
}

/// Max-shifted log-sum-exp cross-entropy. Returns the loss and the softmax
/// probabilities (zero for `-inf` logits).
pub(crate) fn xent_forward(logits: &[f64], target: usize, tau: f64) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = logits.iter().map(|&z| (z - max) / tau).collect();
    let sum: f64 = shifted.iter().map(|s| s.exp()).sum();
    let log_z = sum.ln();
    let probs = shifted.iter().map(|s| (s - log_z).exp()).collect();
    (log_z - shifted[target], probs)
}
