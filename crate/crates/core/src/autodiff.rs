//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Every operation appends a node holding its output value. `backward`
//! walks the tape in reverse, accumulating adjoints only into nodes that
//! depend on a parameter leaf, so constant inputs (frozen embeddings, review
//! banks) cost nothing on the way back.

use crate::matrix::{matmul_acc, matmul_nt_acc, matmul_tn_acc, Matrix};
use crate::special::{digamma, trigamma};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddColBroadcast(Var, Var),
    MulRowBroadcast(Var, Var),
    DivRowBroadcast(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Recip(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    ClampMax(Var, f64),
    Exp(Var),
    Digamma(Var),
    ColSum(Var),
    Sum(Var),
    VStack(Vec<Var>),
    HStack(Vec<Var>),
    ColRange(Var, usize),
    SelectCols(Var, Vec<usize>),
    EmbedCols(Var, Vec<usize>),
    RowMax(Var, Vec<usize>),
    SoftmaxCols(Var),
    LogSoftmaxCols(Var),
    NormalizeCols(Var, Vec<f64>),
    Pick(Var, Vec<usize>),
}

struct Node {
    value: Matrix,
    op: Op,
    tracked: bool,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads[v.0].take()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn push(&mut self, value: Matrix, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn push_unary(&mut self, a: Var, value: Matrix, op: Op) -> Var {
        let t = self.tracked(a);
        self.push(value, op, t)
    }

    fn push_binary(&mut self, a: Var, b: Var, value: Matrix, op: Op) -> Var {
        let t = self.tracked(a) || self.tracked(b);
        self.push(value, op, t)
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf, false)
    }

    /// A differentiable leaf.
    pub fn param(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.cols(), vb.rows(), "matmul {:?} x {:?}", va.shape(), vb.shape());
        let mut out = Matrix::zeros(va.rows(), vb.cols());
        matmul_acc(va, vb, &mut out);
        self.push_binary(a, b, out, Op::MatMul(a, b))
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Matrix {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "elementwise shape mismatch");
        let data = va
            .as_slice()
            .iter()
            .zip(vb.as_slice())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Matrix::from_vec(va.rows(), va.cols(), data).expect("shape")
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push_unary(a, out, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |x, y| x + y);
        self.push_binary(a, b, v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |x, y| x - y);
        self.push_binary(a, b, v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |x, y| x * y);
        self.push_binary(a, b, v, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |x, y| x / y);
        self.push_binary(a, b, v, Op::Div(a, b))
    }

    /// `a (r x c) + bias (r x 1)` added to every column.
    pub fn add_col_broadcast(&mut self, a: Var, bias: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(bias));
        assert_eq!((va.rows(), 1), vb.shape(), "bias shape");
        let mut out = va.clone();
        for r in 0..va.rows() {
            let b = vb[(r, 0)];
            for c in 0..va.cols() {
                out[(r, c)] += b;
            }
        }
        self.push_binary(a, bias, out, Op::AddColBroadcast(a, bias))
    }

    /// `a (r x c)` with column `j` multiplied by `row[j]` (`row` is `1 x c`).
    pub fn mul_row_broadcast(&mut self, a: Var, row: Var) -> Var {
        let (va, vr) = (self.value(a), self.value(row));
        assert_eq!((1, va.cols()), vr.shape(), "row broadcast shape");
        let mut out = va.clone();
        for r in 0..va.rows() {
            for c in 0..va.cols() {
                out[(r, c)] *= vr[(0, c)];
            }
        }
        self.push_binary(a, row, out, Op::MulRowBroadcast(a, row))
    }

    pub fn div_row_broadcast(&mut self, a: Var, row: Var) -> Var {
        let (va, vr) = (self.value(a), self.value(row));
        assert_eq!((1, va.cols()), vr.shape(), "row broadcast shape");
        let mut out = va.clone();
        for r in 0..va.rows() {
            for c in 0..va.cols() {
                out[(r, c)] /= vr[(0, c)];
            }
        }
        self.push_binary(a, row, out, Op::DivRowBroadcast(a, row))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        self.push_unary(a, v, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x + s);
        self.push_unary(a, v, Op::AddScalar(a))
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| 1.0 / x);
        self.push_unary(a, v, Op::Recip(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push_unary(a, v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push_unary(a, v, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push_unary(a, v, Op::Relu(a))
    }

    /// `min(a, cap)`; the gradient is cut where the cap is active.
    pub fn clamp_max(&mut self, a: Var, cap: f64) -> Var {
        let v = self.value(a).map(|x| x.min(cap));
        self.push_unary(a, v, Op::ClampMax(a, cap))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push_unary(a, v, Op::Exp(a))
    }

    pub fn digamma(&mut self, a: Var) -> Var {
        let v = self.value(a).map(digamma);
        self.push_unary(a, v, Op::Digamma(a))
    }

    /// Column sums, `r x c -> 1 x c`.
    pub fn col_sum(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let mut out = Matrix::zeros(1, va.cols());
        for r in 0..va.rows() {
            for c in 0..va.cols() {
                out[(0, c)] += va[(r, c)];
            }
        }
        self.push_unary(a, out, Op::ColSum(a))
    }

    /// Sum of all entries as a `1 x 1` matrix.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).as_slice().iter().sum();
        self.push_unary(a, Matrix::filled(1, 1, s), Op::Sum(a))
    }

    /// Concatenate along rows; all parts share a column count.
    pub fn vstack(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let rows: usize = parts.iter().map(|&p| self.value(p).rows()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols(), cols, "vstack column mismatch");
            data.extend_from_slice(v.as_slice());
        }
        let tracked = parts.iter().any(|&p| self.tracked(p));
        let out = Matrix::from_vec(rows, cols, data).expect("shape");
        self.push(out, Op::VStack(parts.to_vec()), tracked)
    }

    /// Concatenate along columns; all parts share a row count.
    pub fn hstack(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.rows(), rows, "hstack row mismatch");
            for r in 0..rows {
                for c in 0..v.cols() {
                    out[(r, offset + c)] = v[(r, c)];
                }
            }
            offset += v.cols();
        }
        let tracked = parts.iter().any(|&p| self.tracked(p));
        self.push(out, Op::HStack(parts.to_vec()), tracked)
    }

    /// Columns `start..start + len`.
    pub fn col_range(&mut self, a: Var, start: usize, len: usize) -> Var {
        let idx: Vec<usize> = (start..start + len).collect();
        let out = select_cols(self.value(a), &idx);
        self.push_unary(a, out, Op::ColRange(a, start))
    }

    pub fn column(&mut self, a: Var, j: usize) -> Var {
        self.col_range(a, j, 1)
    }

    pub fn select_cols(&mut self, a: Var, idx: &[usize]) -> Var {
        let out = select_cols(self.value(a), idx);
        self.push_unary(a, out, Op::SelectCols(a, idx.to_vec()))
    }

    /// Lay table rows out as columns: `out[:, n] = table[idx[n], :]`.
    pub fn embed_cols(&mut self, table: Var, idx: &[usize]) -> Var {
        let t = self.value(table);
        let mut out = Matrix::zeros(t.cols(), idx.len());
        for (n, &row) in idx.iter().enumerate() {
            for (d, &v) in t.row(row).iter().enumerate() {
                out[(d, n)] = v;
            }
        }
        self.push_unary(table, out, Op::EmbedCols(table, idx.to_vec()))
    }

    /// Row-wise maximum, `r x c -> r x 1`. Ties resolve to the first column.
    pub fn row_max(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let mut out = Matrix::zeros(va.rows(), 1);
        let mut arg = Vec::with_capacity(va.rows());
        for r in 0..va.rows() {
            let row = va.row(r);
            let (mut best, mut best_j) = (row[0], 0);
            for (j, &x) in row.iter().enumerate().skip(1) {
                if x > best {
                    best = x;
                    best_j = j;
                }
            }
            out[(r, 0)] = best;
            arg.push(best_j);
        }
        self.push_unary(a, out, Op::RowMax(a, arg))
    }

    /// Softmax down each column.
    pub fn softmax_cols(&mut self, a: Var) -> Var {
        let out = log_softmax_cols(self.value(a)).map(f64::exp);
        self.push_unary(a, out, Op::SoftmaxCols(a))
    }

    pub fn log_softmax_cols(&mut self, a: Var) -> Var {
        let out = log_softmax_cols(self.value(a));
        self.push_unary(a, out, Op::LogSoftmaxCols(a))
    }

    /// Scale each column to unit Euclidean norm. Zero columns are left as zero.
    pub fn normalize_cols(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let mut norms = Vec::with_capacity(va.cols());
        let mut out = va.clone();
        for c in 0..va.cols() {
            let n = (0..va.rows()).map(|r| va[(r, c)].powi(2)).sum::<f64>().sqrt();
            norms.push(n);
            if n > 0.0 {
                for r in 0..va.rows() {
                    out[(r, c)] /= n;
                }
            }
        }
        self.push_unary(a, out, Op::NormalizeCols(a, norms))
    }

    /// `out[0, j] = a[idx[j], j]`.
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Var {
        let va = self.value(a);
        assert_eq!(va.cols(), idx.len(), "pick index count");
        let mut out = Matrix::zeros(1, idx.len());
        for (j, &r) in idx.iter().enumerate() {
            out[(0, j)] = va[(r, j)];
        }
        self.push_unary(a, out, Op::Pick(a, idx.to_vec()))
    }

    /// Reverse accumulation from a `1 x 1` output.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.shape(output), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Matrix::filled(1, 1, 1.0));

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.tracked(*a) {
                    let ga = slot(grads, *a, va.shape());
                    matmul_nt_acc(g, vb, ga);
                }
                if self.tracked(*b) {
                    let gb = slot(grads, *b, vb.shape());
                    matmul_tn_acc(va, g, gb);
                }
            }
            Op::Transpose(a) => {
                if self.tracked(*a) {
                    let gt = g.transpose();
                    slot(grads, *a, gt.shape()).add_assign(&gt);
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, |_, d| *d = 1.0, g);
                self.acc(grads, *b, |_, d| *d = 1.0, g);
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |_, d| *d = 1.0, g);
                self.acc(grads, *b, |_, d| *d = -1.0, g);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).clone(), self.value(*b).clone());
                self.acc(grads, *a, |k, d| *d = vb.as_slice()[k], g);
                self.acc(grads, *b, |k, d| *d = va.as_slice()[k], g);
            }
            Op::Div(a, b) => {
                let vb = self.value(*b).clone();
                self.acc(grads, *a, |k, d| *d = 1.0 / vb.as_slice()[k], g);
                self.acc(grads, *b, |k, d| *d = -y.as_slice()[k] / vb.as_slice()[k], g);
            }
            Op::AddColBroadcast(a, bias) => {
                self.acc(grads, *a, |_, d| *d = 1.0, g);
                if self.tracked(*bias) {
                    let gb = slot(grads, *bias, (g.rows(), 1));
                    for r in 0..g.rows() {
                        gb[(r, 0)] += g.row(r).iter().sum::<f64>();
                    }
                }
            }
            Op::MulRowBroadcast(a, row) => {
                let (va, vr) = (self.value(*a), self.value(*row));
                if self.tracked(*a) {
                    let ga = slot(grads, *a, va.shape());
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            ga[(r, c)] += g[(r, c)] * vr[(0, c)];
                        }
                    }
                }
                if self.tracked(*row) {
                    let gr = slot(grads, *row, vr.shape());
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            gr[(0, c)] += g[(r, c)] * va[(r, c)];
                        }
                    }
                }
            }
            Op::DivRowBroadcast(a, row) => {
                let (va, vr) = (self.value(*a), self.value(*row));
                if self.tracked(*a) {
                    let ga = slot(grads, *a, va.shape());
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            ga[(r, c)] += g[(r, c)] / vr[(0, c)];
                        }
                    }
                }
                if self.tracked(*row) {
                    let gr = slot(grads, *row, vr.shape());
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            gr[(0, c)] -= g[(r, c)] * y[(r, c)] / vr[(0, c)];
                        }
                    }
                }
            }
            Op::Scale(a, s) => self.acc(grads, *a, |_, d| *d = *s, g),
            Op::AddScalar(a) => self.acc(grads, *a, |_, d| *d = 1.0, g),
            Op::Recip(a) => self.acc(grads, *a, |k, d| *d = -y.as_slice()[k].powi(2), g),
            Op::Sigmoid(a) => self.acc(
                grads,
                *a,
                |k, d| {
                    let s = y.as_slice()[k];
                    *d = s * (1.0 - s)
                },
                g,
            ),
            Op::Tanh(a) => self.acc(grads, *a, |k, d| *d = 1.0 - y.as_slice()[k].powi(2), g),
            Op::Relu(a) => {
                let va = self.value(*a);
                self.acc(grads, *a, |k, d| *d = if va.as_slice()[k] > 0.0 { 1.0 } else { 0.0 }, g)
            }
            Op::ClampMax(a, cap) => {
                let va = self.value(*a);
                self.acc(grads, *a, |k, d| *d = if va.as_slice()[k] < *cap { 1.0 } else { 0.0 }, g)
            }
            Op::Exp(a) => self.acc(grads, *a, |k, d| *d = y.as_slice()[k], g),
            Op::Digamma(a) => {
                let va = self.value(*a);
                self.acc(grads, *a, |k, d| *d = trigamma(va.as_slice()[k]), g)
            }
            Op::ColSum(a) => {
                if self.tracked(*a) {
                    let shape = self.shape(*a);
                    let ga = slot(grads, *a, shape);
                    for r in 0..shape.0 {
                        for c in 0..shape.1 {
                            ga[(r, c)] += g[(0, c)];
                        }
                    }
                }
            }
            Op::Sum(a) => {
                let s = g[(0, 0)];
                self.acc(grads, *a, |_, d| *d = s, &Matrix::filled(1, 1, 1.0));
            }
            Op::VStack(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let shape = self.shape(p);
                    if self.tracked(p) {
                        let gp = slot(grads, p, shape);
                        let src = &g.as_slice()[offset * shape.1..(offset + shape.0) * shape.1];
                        for (d, s) in gp.as_mut_slice().iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                    offset += shape.0;
                }
            }
            Op::HStack(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let shape = self.shape(p);
                    if self.tracked(p) {
                        let gp = slot(grads, p, shape);
                        for r in 0..shape.0 {
                            for c in 0..shape.1 {
                                gp[(r, c)] += g[(r, offset + c)];
                            }
                        }
                    }
                    offset += shape.1;
                }
            }
            Op::ColRange(a, start) => {
                if self.tracked(*a) {
                    let shape = self.shape(*a);
                    let ga = slot(grads, *a, shape);
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            ga[(r, start + c)] += g[(r, c)];
                        }
                    }
                }
            }
            Op::SelectCols(a, idx) => {
                if self.tracked(*a) {
                    let shape = self.shape(*a);
                    let ga = slot(grads, *a, shape);
                    for r in 0..g.rows() {
                        for (c, &src) in idx.iter().enumerate() {
                            ga[(r, src)] += g[(r, c)];
                        }
                    }
                }
            }
            Op::EmbedCols(table, idx) => {
                if self.tracked(*table) {
                    let shape = self.shape(*table);
                    let gt = slot(grads, *table, shape);
                    for (n, &row) in idx.iter().enumerate() {
                        for d in 0..shape.1 {
                            gt[(row, d)] += g[(d, n)];
                        }
                    }
                }
            }
            Op::RowMax(a, arg) => {
                if self.tracked(*a) {
                    let shape = self.shape(*a);
                    let ga = slot(grads, *a, shape);
                    for (r, &j) in arg.iter().enumerate() {
                        ga[(r, j)] += g[(r, 0)];
                    }
                }
            }
            Op::SoftmaxCols(a) => {
                if self.tracked(*a) {
                    let ga = slot(grads, *a, y.shape());
                    for c in 0..y.cols() {
                        let dot: f64 = (0..y.rows()).map(|r| g[(r, c)] * y[(r, c)]).sum();
                        for r in 0..y.rows() {
                            ga[(r, c)] += y[(r, c)] * (g[(r, c)] - dot);
                        }
                    }
                }
            }
            Op::LogSoftmaxCols(a) => {
                if self.tracked(*a) {
                    let ga = slot(grads, *a, y.shape());
                    for c in 0..y.cols() {
                        let total: f64 = (0..y.rows()).map(|r| g[(r, c)]).sum();
                        for r in 0..y.rows() {
                            ga[(r, c)] += g[(r, c)] - y[(r, c)].exp() * total;
                        }
                    }
                }
            }
            Op::NormalizeCols(a, norms) => {
                if self.tracked(*a) {
                    let ga = slot(grads, *a, y.shape());
                    for (c, &n) in norms.iter().enumerate() {
                        if n == 0.0 {
                            continue;
                        }
                        let dot: f64 = (0..y.rows()).map(|r| g[(r, c)] * y[(r, c)]).sum();
                        for r in 0..y.rows() {
                            ga[(r, c)] += (g[(r, c)] - y[(r, c)] * dot) / n;
                        }
                    }
                }
            }
            Op::Pick(a, idx) => {
                if self.tracked(*a) {
                    let shape = self.shape(*a);
                    let ga = slot(grads, *a, shape);
                    for (j, &r) in idx.iter().enumerate() {
                        ga[(r, j)] += g[(0, j)];
                    }
                }
            }
        }
    }

    /// Elementwise chain rule: `grad[a][k] += g[k] * d(k)` where `d` writes the
    /// local derivative. A `1 x 1` upstream `g` is broadcast.
    fn acc(
        &self,
        grads: &mut [Option<Matrix>],
        a: Var,
        local: impl Fn(usize, &mut f64),
        g: &Matrix,
    ) {
        if !self.tracked(a) {
            return;
        }
        let shape = self.shape(a);
        let ga = slot(grads, a, shape);
        let broadcast = g.len() == 1 && ga.len() != 1;
        let gs = g.as_slice();
        let mut d = 0.0;
        for (k, out) in ga.as_mut_slice().iter_mut().enumerate() {
            local(k, &mut d);
            let up = if broadcast { gs[0] } else { gs[k] };
            *out += up * d;
        }
    }
}

fn slot(grads: &mut [Option<Matrix>], v: Var, shape: (usize, usize)) -> &mut Matrix {
    grads[v.0].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1))
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn select_cols(m: &Matrix, idx: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), idx.len());
    for r in 0..m.rows() {
        for (c, &src) in idx.iter().enumerate() {
            out[(r, c)] = m[(r, src)];
        }
    }
    out
}

fn log_softmax_cols(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for c in 0..m.cols() {
        let max = (0..m.rows()).map(|r| m[(r, c)]).fold(f64::NEG_INFINITY, f64::max);
        let lse = max + (0..m.rows()).map(|r| (m[(r, c)] - max).exp()).sum::<f64>().ln();
        for r in 0..m.rows() {
            out[(r, c)] = m[(r, c)] - lse;
        }
    }
    out
}
