//! Reverse-mode differentiation over the small set of primitives the models
//! are built from.
//!
//! A [`Graph`] records every value it computes. Leaves either borrow an
//! existing tensor (parameters, data) or own a fresh one. Calling
//! [`Graph::backward`] on a scalar node walks the record in reverse and
//! returns the gradient of that scalar with respect to every node that was
//! created from a differentiable leaf.
//!
//! All op outputs are rank-2; a rank-1 leaf is treated as a single row.

use std::borrow::Cow;

use super::tensor::{gemm, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    /// `a · b`
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// Adds a `1 × c` row to every row of `a`.
    AddRow(Var, Var),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    Transpose(Var),
    SliceCols(Var, usize, usize),
    ConcatCols(Var, Var),
    StackRows(Vec<Var>),
    Sum(Var),
    MeanSquare(Var),
    SumSquare(Var),
    /// `a * s` for a single-element `s`.
    MulScalar(Var, Var),
    AddScalar(Var, Var),
    DivScalar(Var, Var),
    /// `a[r, c] * scale[r] + shift[r]` with constant per-row coefficients.
    RowAffine(Var, Vec<f64>),
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    tracked: bool,
}

/// Recorded computation; see the module docs.
#[derive(Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`, zeros when `v` did not influence the output.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.reshape(&self.shapes[v.0]).expect("grad shape"),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn contributed(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }
}

fn as_matrix(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

fn mat(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
    Tensor::matrix(rows, cols, data).expect("internal shape")
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].tracked)
    }

    /// Differentiable leaf borrowing `t`.
    pub fn param(&mut self, t: &'a Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(t),
            op: Op::Leaf,
            tracked: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf owning `t`.
    pub fn param_owned(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Non-differentiable leaf borrowing `t`.
    pub fn constant(&mut self, t: &'a Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(t),
            op: Op::Leaf,
            tracked: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant_owned(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        assert_eq!(t.len(), 1, "not a scalar node");
        t.data()[0]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        as_matrix(self.value(v))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dimension {k} vs {k2}");
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, 1.0, self.value(a).data(), false, self.value(b).data(), false, 0.0, &mut out);
        let tr = self.tracked(&[a, b]);
        self.push(mat(m, n, out), Op::MatMul(a, b), tr)
    }

    /// `a · bᵀ`, used to apply a transition matrix to row-stacked states.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        assert_eq!(k, k2, "matmul_t inner dimension {k} vs {k2}");
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, 1.0, self.value(a).data(), false, self.value(b).data(), true, 0.0, &mut out);
        let tr = self.tracked(&[a, b]);
        self.push(mat(m, n, out), Op::MatMulT(a, b), tr)
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!((r, c), self.shape(b), "elementwise shape mismatch");
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let tr = self.tracked(&[a, b]);
        self.push(mat(r, c, data), op, tr)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.value(row).len(), c, "bias length");
        let bias = self.value(row).data();
        let mut data = self.value(a).data().to_vec();
        for chunk in data.chunks_mut(c.max(1)) {
            for (v, b) in chunk.iter_mut().zip(bias) {
                *v += b;
            }
        }
        let tr = self.tracked(&[a, row]);
        self.push(mat(r, c, data), Op::AddRow(a, row), tr)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let (r, c) = self.shape(a);
        let data = self.value(a).data().iter().map(|v| v * s).collect();
        let tr = self.tracked(&[a]);
        self.push(mat(r, c, data), Op::Scale(a, s), tr)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let (r, c) = self.shape(a);
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&v| if v > 0.0 { v } else { slope * v })
            .collect();
        let tr = self.tracked(&[a]);
        self.push(mat(r, c, data), Op::LeakyRelu(a, slope), tr)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.leaky_relu(a, 0.0)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.value(a).as_row().transpose();
        let tr = self.tracked(&[a]);
        self.push(t, Op::Transpose(a), tr)
    }

    pub fn slice_cols(&mut self, a: Var, lo: usize, hi: usize) -> Var {
        let (r, c) = self.shape(a);
        assert!(lo <= hi && hi <= c, "slice {lo}..{hi} out of {c}");
        let t = self.value(a).as_row().slice_cols(lo, hi);
        let tr = self.tracked(&[a]);
        self.push(mat(r, hi - lo, t.into_data()), Op::SliceCols(a, lo, hi), tr)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let t = self
            .value(a)
            .as_row()
            .concat_cols(&self.value(b).as_row())
            .expect("concat row mismatch");
        let tr = self.tracked(&[a, b]);
        self.push(t, Op::ConcatCols(a, b), tr)
    }

    /// Vertical stack of operands sharing a column count.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let c = self.shape(parts[0]).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, cp) = self.shape(p);
            assert_eq!(cp, c, "stack_rows column mismatch");
            data.extend_from_slice(self.value(p).data());
            rows += r;
        }
        let tr = self.tracked(parts);
        self.push(mat(rows, c, data), Op::StackRows(parts.to_vec()), tr)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let tr = self.tracked(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), tr)
    }

    /// Mean of squared entries.
    pub fn mean_square(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.sum_squares() / t.len().max(1) as f64;
        let tr = self.tracked(&[a]);
        self.push(Tensor::scalar(s), Op::MeanSquare(a), tr)
    }

    pub fn sum_square(&mut self, a: Var) -> Var {
        let s = self.value(a).sum_squares();
        let tr = self.tracked(&[a]);
        self.push(Tensor::scalar(s), Op::SumSquare(a), tr)
    }

    fn scalar_op(&mut self, a: Var, s: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (r, c) = self.shape(a);
        let sv = self.scalar(s);
        let data = self.value(a).data().iter().map(|&v| f(v, sv)).collect();
        let tr = self.tracked(&[a, s]);
        self.push(mat(r, c, data), op, tr)
    }

    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        self.scalar_op(a, s, |v, s| v * s, Op::MulScalar(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: Var) -> Var {
        self.scalar_op(a, s, |v, s| v + s, Op::AddScalar(a, s))
    }

    pub fn div_scalar(&mut self, a: Var, s: Var) -> Var {
        self.scalar_op(a, s, |v, s| v / s, Op::DivScalar(a, s))
    }

    pub fn row_affine(&mut self, a: Var, scale: Vec<f64>, shift: Vec<f64>) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(scale.len(), r);
        assert_eq!(shift.len(), r);
        let mut data = self.value(a).data().to_vec();
        for (i, chunk) in data.chunks_mut(c.max(1)).enumerate().take(r) {
            for v in chunk {
                *v = *v * scale[i] + shift[i];
            }
        }
        let tr = self.tracked(&[a]);
        self.push(mat(r, c, data), Op::RowAffine(a, scale), tr)
    }

    /// Reverse sweep from the single-element node `out`.
    pub fn backward(&self, out: Var) -> Gradients {
        assert_eq!(self.value(out).len(), 1, "backward needs a scalar output");
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[out.0] = Some(Tensor::scalar(1.0));

        for i in (0..=out.0).rev() {
            if !self.nodes[i].tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        }
    }

    fn accumulate<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> Option<&'g mut Tensor> {
        if !self.nodes[v.0].tracked {
            return None;
        }
        let (r, c) = self.shape(v);
        Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(&[r, c])))
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let n = self.shape(*b).1;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.accumulate(grads, *a) {
                    gemm(m, n, k, 1.0, gd, false, bv, true, 1.0, ga.data_mut());
                }
                if let Some(gb) = self.accumulate(grads, *b) {
                    gemm(k, m, n, 1.0, av, true, gd, false, 1.0, gb.data_mut());
                }
            }
            Op::MatMulT(a, b) => {
                let (m, k) = self.shape(*a);
                let n = self.shape(*b).0;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.accumulate(grads, *a) {
                    gemm(m, n, k, 1.0, gd, false, bv, false, 1.0, ga.data_mut());
                }
                if let Some(gb) = self.accumulate(grads, *b) {
                    gemm(n, m, k, 1.0, gd, true, av, false, 1.0, gb.data_mut());
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = self.accumulate(grads, *a) {
                    ga.add_assign(g);
                }
                if let Some(gb) = self.accumulate(grads, *b) {
                    gb.add_assign(g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.accumulate(grads, *a) {
                    ga.add_assign(g);
                }
                if let Some(gb) = self.accumulate(grads, *b) {
                    for (x, y) in gb.data_mut().iter_mut().zip(gd) {
                        *x -= y;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.accumulate(grads, *a) {
                    for ((x, gi), bi) in ga.data_mut().iter_mut().zip(gd).zip(bv) {
                        *x += gi * bi;
                    }
                }
                if let Some(gb) = self.accumulate(grads, *b) {
                    for ((x, gi), ai) in gb.data_mut().iter_mut().zip(gd).zip(av) {
                        *x += gi * ai;
                    }
                }
            }
            Op::AddRow(a, row) => {
                if let Some(ga) = self.accumulate(grads, *a) {
                    ga.add_assign(g);
                }
                let c = g.cols();
                if let Some(gr) = self.accumulate(grads, *row) {
                    let gr = gr.data_mut();
                    for chunk in gd.chunks(c.max(1)) {
                        for (x, gi) in gr.iter_mut().zip(chunk) {
                            *x += gi;
                        }
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = self.accumulate(grads, *a) {
                    for (x, gi) in ga.data_mut().iter_mut().zip(gd) {
                        *x += s * gi;
                    }
                }
            }
            Op::LeakyRelu(a, slope) => {
                let av = self.value(*a).data();
                if let Some(ga) = self.accumulate(grads, *a) {
                    for ((x, gi), ai) in ga.data_mut().iter_mut().zip(gd).zip(av) {
                        *x += if *ai > 0.0 { *gi } else { slope * gi };
                    }
                }
            }
            Op::Transpose(a) => {
                if let Some(ga) = self.accumulate(grads, *a) {
                    ga.add_assign(&g.transpose());
                }
            }
            Op::SliceCols(a, lo, hi) => {
                let c = self.shape(*a).1;
                let w = hi - lo;
                if let Some(ga) = self.accumulate(grads, *a) {
                    let gad = ga.data_mut();
                    for (r, chunk) in gd.chunks(w.max(1)).enumerate() {
                        for (j, gi) in chunk.iter().enumerate() {
                            gad[r * c + lo + j] += gi;
                        }
                    }
                }
            }
            Op::ConcatCols(a, b) => {
                let ca = self.shape(*a).1;
                let cb = self.shape(*b).1;
                let c = ca + cb;
                let rows = g.rows();
                if let Some(ga) = self.accumulate(grads, *a) {
                    let gad = ga.data_mut();
                    for r in 0..rows {
                        for j in 0..ca {
                            gad[r * ca + j] += gd[r * c + j];
                        }
                    }
                }
                if let Some(gb) = self.accumulate(grads, *b) {
                    let gbd = gb.data_mut();
                    for r in 0..rows {
                        for j in 0..cb {
                            gbd[r * cb + j] += gd[r * c + ca + j];
                        }
                    }
                }
            }
            Op::StackRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    if let Some(gp) = self.accumulate(grads, *p) {
                        for (x, gi) in gp.data_mut().iter_mut().zip(&gd[offset..offset + len]) {
                            *x += gi;
                        }
                    }
                    offset += len;
                }
            }
            Op::Sum(a) => {
                let s = gd[0];
                if let Some(ga) = self.accumulate(grads, *a) {
                    for x in ga.data_mut() {
                        *x += s;
                    }
                }
            }
            Op::MeanSquare(a) | Op::SumSquare(a) => {
                let av = self.value(*a).data();
                let factor = match &self.nodes[i].op {
                    Op::MeanSquare(_) => 2.0 * gd[0] / av.len().max(1) as f64,
                    _ => 2.0 * gd[0],
                };
                if let Some(ga) = self.accumulate(grads, *a) {
                    for (x, ai) in ga.data_mut().iter_mut().zip(av) {
                        *x += factor * ai;
                    }
                }
            }
            Op::MulScalar(a, s) => {
                let sv = self.scalar(*s);
                let av = self.value(*a).data();
                if let Some(ga) = self.accumulate(grads, *a) {
                    for (x, gi) in ga.data_mut().iter_mut().zip(gd) {
                        *x += gi * sv;
                    }
                }
                if let Some(gs) = self.accumulate(grads, *s) {
                    gs.data_mut()[0] += gd.iter().zip(av).map(|(g, a)| g * a).sum::<f64>();
                }
            }
            Op::AddScalar(a, s) => {
                if let Some(ga) = self.accumulate(grads, *a) {
                    ga.add_assign(g);
                }
                if let Some(gs) = self.accumulate(grads, *s) {
                    gs.data_mut()[0] += g.sum();
                }
            }
            Op::DivScalar(a, s) => {
                let sv = self.scalar(*s);
                let av = self.value(*a).data();
                if let Some(ga) = self.accumulate(grads, *a) {
                    for (x, gi) in ga.data_mut().iter_mut().zip(gd) {
                        *x += gi / sv;
                    }
                }
                if let Some(gs) = self.accumulate(grads, *s) {
                    gs.data_mut()[0] -=
                        gd.iter().zip(av).map(|(g, a)| g * a).sum::<f64>() / (sv * sv);
                }
            }
            Op::RowAffine(a, scale) => {
                let c = g.cols();
                if let Some(ga) = self.accumulate(grads, *a) {
                    for ((r, chunk), gchunk) in ga
                        .data_mut()
                        .chunks_mut(c.max(1))
                        .enumerate()
                        .zip(gd.chunks(c.max(1)))
                    {
                        for (x, gi) in chunk.iter_mut().zip(gchunk) {
                            *x += gi * scale[r];
                        }
                    }
                }
            }
        }
    }
}
