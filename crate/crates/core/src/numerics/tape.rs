//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`Tape`] records every primitive in forward order. [`Tape::backward`]
//! replays adjoints from a scalar output in exact reverse order; nodes that
//! do not lie on a path to the output keep a zero gradient.
//!
//! Leaves may borrow their value (`Tape::leaf_ref`), so model parameters are
//! shared read-only between tapes instead of being copied per evaluation.
//!
//! Shape errors inside a recorded graph are programming errors and panic with
//! both shapes in the message.

use std::borrow::Cow;

use super::matrix::Matrix;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulTransB(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddConst(Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    Tanh(Var),
    Exp(Var),
    SoftmaxRows(Var),
    GatherRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    Transpose(Var),
    Sum(Var),
    LogSumExp(Var),
    Entry(Var, usize, usize),
    PairwiseSqDist(Var),
    DoubleCenter(Var),
    FrobeniusDot(Var, Var),
}

struct Node<'a> {
    value: Cow<'a, Matrix>,
    op: Op,
}

/// Ordered record of primitive operations.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    adjoints: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// `∂output/∂var`; all zeros when `var` does not reach the output.
    pub fn wrt(&self, var: Var) -> Matrix {
        match self.adjoints.get(var.0).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes.get(var.0).copied().unwrap_or((0, 0));
                Matrix::zeros(r, c)
            }
        }
    }

    /// Borrowing variant of [`Gradients::wrt`]; `None` means zero.
    pub fn get(&self, var: Var) -> Option<&Matrix> {
        self.adjoints.get(var.0).and_then(Option::as_ref)
    }
}

fn check_same(op: &str, a: &Matrix, b: &Matrix) {
    assert_eq!(
        a.shape(),
        b.shape(),
        "{op}: shapes {}x{} and {}x{} differ",
        a.rows(),
        a.cols(),
        b.rows(),
        b.cols()
    );
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Matrix>, op: Op) -> Var {
        debug_assert!(value.is_finite(), "non-finite value produced by {op:?}");
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn push_owned(&mut self, value: Matrix, op: Op) -> Var {
        self.push(Cow::Owned(value), op)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push_owned(value, Op::Leaf)
    }

    /// Records a leaf that borrows its value.
    pub fn leaf_ref(&mut self, value: &'a Matrix) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self
            .value(a)
            .matmul(self.value(b))
            .unwrap_or_else(|e| panic!("{e}"));
        self.push_owned(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_transb(&mut self, a: Var, b: Var) -> Var {
        let out = self
            .value(a)
            .matmul_transb(self.value(b))
            .unwrap_or_else(|e| panic!("{e}"));
        self.push_owned(out, Op::MatMulTransB(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        check_same("add", self.value(a), self.value(b));
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y).unwrap();
        self.push_owned(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        check_same("sub", self.value(a), self.value(b));
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y).unwrap();
        self.push_owned(out, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        check_same("mul", self.value(a), self.value(b));
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y).unwrap();
        self.push_owned(out, Op::Mul(a, b))
    }

    /// `a + offset` where `offset` carries no gradient.
    pub fn add_const(&mut self, a: Var, offset: &Matrix) -> Var {
        check_same("add_const", self.value(a), offset);
        let out = self.value(a).zip_map(offset, |x, y| x + y).unwrap();
        self.push_owned(out, Op::AddConst(a))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).scale(factor);
        self.push_owned(out, Op::Scale(a, factor))
    }

    /// `s · a` where `s` is a 1x1 node; gradients reach both.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        let factor = self.value(s).item();
        let out = self.value(a).scale(factor);
        self.push_owned(out, Op::ScaleBy(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).tanh();
        self.push_owned(out, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push_owned(out, Op::Exp(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = self.value(a).softmax_rows();
        self.push_owned(out, Op::SoftmaxRows(a))
    }

    /// Rows `indices` of `src`, in order (repeats allowed).
    pub fn gather_rows(&mut self, src: Var, indices: &[usize]) -> Var {
        let m = self.value(src);
        let cols = m.cols();
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            assert!(i < m.rows(), "gather_rows: row {i} of a {}x{cols} matrix", m.rows());
            data.extend_from_slice(m.row(i));
        }
        let out = Matrix::from_vec(indices.len(), cols, data).unwrap();
        self.push_owned(out, Op::GatherRows(src, indices.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let refs: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Matrix::concat_rows(&refs).unwrap_or_else(|e| panic!("{e}"));
        self.push_owned(out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push_owned(out, Op::Transpose(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Matrix::scalar(self.value(a).sum());
        self.push_owned(out, Op::Sum(a))
    }

    /// `log Σ exp(a_ij)` over every entry, max-shifted.
    pub fn log_sum_exp(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let max = m.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = m.as_slice().iter().map(|v| (v - max).exp()).sum();
        self.push_owned(Matrix::scalar(max + total.ln()), Op::LogSumExp(a))
    }

    pub fn entry(&mut self, a: Var, row: usize, col: usize) -> Var {
        let v = self.value(a).get(row, col);
        self.push_owned(Matrix::scalar(v), Op::Entry(a, row, col))
    }

    /// Squared Euclidean distances between the rows of an `m×p` node.
    pub fn pairwise_sq_dist(&mut self, x: Var) -> Var {
        let out = pairwise_sq_dist(self.value(x));
        self.push_owned(out, Op::PairwiseSqDist(x))
    }

    /// `P·a·P` with the centering matrix `P = I − 11ᵀ/m`.
    pub fn double_center(&mut self, a: Var) -> Var {
        let out = self.value(a).double_center();
        self.push_owned(out, Op::DoubleCenter(a))
    }

    /// `Σ a_ij b_ij` as a 1x1 node.
    pub fn frobenius_dot(&mut self, a: Var, b: Var) -> Var {
        check_same("frobenius_dot", self.value(a), self.value(b));
        let out = Matrix::scalar(self.value(a).frobenius_dot(self.value(b)));
        self.push_owned(out, Op::FrobeniusDot(a, b))
    }

    /// Gradient of the scalar `output` with respect to one node.
    pub fn grad(&self, output: Var, wrt: Var) -> Matrix {
        self.backward(output).wrt(wrt)
    }

    /// Propagates adjoints from the 1x1 node `output` back to every node.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(
            self.value(output).shape(),
            (1, 1),
            "backward needs a scalar output"
        );
        let n = output.0 + 1;
        let mut adj: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[output.0] = Some(Matrix::scalar(1.0));

        for i in (0..n).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            let y = &*node.value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = g.matmul_transb(self.value(*b)).unwrap();
                    let db = self.value(*a).matmul_transa(&g).unwrap();
                    self.acc(&mut adj, *a, |m| m.add_assign(&da));
                    self.acc(&mut adj, *b, |m| m.add_assign(&db));
                }
                Op::MatMulTransB(a, b) => {
                    let da = g.matmul(self.value(*b)).unwrap();
                    let db = g.matmul_transa(self.value(*a)).unwrap();
                    self.acc(&mut adj, *a, |m| m.add_assign(&da));
                    self.acc(&mut adj, *b, |m| m.add_assign(&db));
                }
                Op::Add(a, b) => {
                    self.acc(&mut adj, *a, |m| m.add_assign(&g));
                    self.acc(&mut adj, *b, |m| m.add_assign(&g));
                }
                Op::Sub(a, b) => {
                    self.acc(&mut adj, *a, |m| m.add_assign(&g));
                    self.acc(&mut adj, *b, |m| m.add_scaled(&g, -1.0));
                }
                Op::Mul(a, b) => {
                    let da = g.zip_map(self.value(*b), |x, y| x * y).unwrap();
                    let db = g.zip_map(self.value(*a), |x, y| x * y).unwrap();
                    self.acc(&mut adj, *a, |m| m.add_assign(&da));
                    self.acc(&mut adj, *b, |m| m.add_assign(&db));
                }
                Op::AddConst(a) => self.acc(&mut adj, *a, |m| m.add_assign(&g)),
                Op::Scale(a, f) => self.acc(&mut adj, *a, |m| m.add_scaled(&g, *f)),
                Op::ScaleBy(a, s) => {
                    let factor = self.value(*s).item();
                    let ds = g.frobenius_dot(self.value(*a));
                    self.acc(&mut adj, *a, |m| m.add_scaled(&g, factor));
                    self.acc(&mut adj, *s, |m| m.as_mut_slice()[0] += ds);
                }
                Op::Tanh(a) => {
                    let da = g.zip_map(y, |gv, yv| gv * (1.0 - yv * yv)).unwrap();
                    self.acc(&mut adj, *a, |m| m.add_assign(&da));
                }
                Op::Exp(a) => {
                    let da = g.zip_map(y, |gv, yv| gv * yv).unwrap();
                    self.acc(&mut adj, *a, |m| m.add_assign(&da));
                }
                Op::SoftmaxRows(a) => {
                    let mut da = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let inner: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for ((d, p), q) in da.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *d = p * (q - inner);
                        }
                    }
                    self.acc(&mut adj, *a, |m| m.add_assign(&da));
                }
                Op::GatherRows(src, indices) => {
                    self.acc(&mut adj, *src, |m| {
                        for (k, &row) in indices.iter().enumerate() {
                            for (d, v) in m.row_mut(row).iter_mut().zip(g.row(k)) {
                                *d += v;
                            }
                        }
                    });
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let rows = self.value(p).rows();
                        self.acc(&mut adj, p, |m| {
                            for r in 0..rows {
                                for (d, v) in m.row_mut(r).iter_mut().zip(g.row(offset + r)) {
                                    *d += v;
                                }
                            }
                        });
                        offset += rows;
                    }
                }
                Op::Transpose(a) => {
                    let gt = g.transpose();
                    self.acc(&mut adj, *a, |m| m.add_assign(&gt));
                }
                Op::Sum(a) => {
                    let gv = g.item();
                    self.acc(&mut adj, *a, |m| m.as_mut_slice().iter_mut().for_each(|d| *d += gv));
                }
                Op::LogSumExp(a) => {
                    let gv = g.item();
                    let lse = y.item();
                    let src = self.value(*a);
                    self.acc(&mut adj, *a, |m| {
                        for (d, v) in m.as_mut_slice().iter_mut().zip(src.as_slice()) {
                            *d += gv * (v - lse).exp();
                        }
                    });
                }
                Op::Entry(a, r, c) => {
                    let gv = g.item();
                    self.acc(&mut adj, *a, |m| {
                        let cur = m.get(*r, *c);
                        m.set(*r, *c, cur + gv);
                    });
                }
                Op::PairwiseSqDist(x) => {
                    let xv = self.value(*x);
                    let (rows, cols) = xv.shape();
                    let mut dx = Matrix::zeros(rows, cols);
                    for i in 0..rows {
                        for j in 0..rows {
                            let coef = 2.0 * (g.get(i, j) + g.get(j, i));
                            if coef == 0.0 {
                                continue;
                            }
                            for k in 0..cols {
                                let cur = dx.get(i, k);
                                dx.set(i, k, cur + coef * (xv.get(i, k) - xv.get(j, k)));
                            }
                        }
                    }
                    self.acc(&mut adj, *x, |m| m.add_assign(&dx));
                }
                Op::DoubleCenter(a) => {
                    let da = g.double_center();
                    self.acc(&mut adj, *a, |m| m.add_assign(&da));
                }
                Op::FrobeniusDot(a, b) => {
                    let gv = g.item();
                    let (av, bv) = (self.value(*a), self.value(*b));
                    self.acc(&mut adj, *a, |m| m.add_scaled(bv, gv));
                    self.acc(&mut adj, *b, |m| m.add_scaled(av, gv));
                }
            }
            adj[i] = Some(g);
        }

        Gradients {
            adjoints: adj,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        }
    }

    fn acc(&self, adj: &mut [Option<Matrix>], v: Var, f: impl FnOnce(&mut Matrix)) {
        let slot = &mut adj[v.0];
        let m = slot.get_or_insert_with(|| {
            let (r, c) = self.nodes[v.0].value.shape();
            Matrix::zeros(r, c)
        });
        f(m);
    }
}

pub(crate) fn pairwise_sq_dist(x: &Matrix) -> Matrix {
    let m = x.rows();
    let mut out = Matrix::zeros(m, m);
    for i in 0..m {
        for j in (i + 1)..m {
            let d: f64 = x
                .row(i)
                .iter()
                .zip(x.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            out.set(i, j, d);
            out.set(j, i, d);
        }
    }
    out
}
