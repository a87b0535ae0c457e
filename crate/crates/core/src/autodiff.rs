//! Minimal reverse-mode differentiation over dense row-major matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Handles are
//! plain indices ([`Var`]) into the tape, so building an expression needs
//! `&mut Tape` and the tape is rebuilt for every evaluation. Only nodes that
//! depend on a parameter take part in the backward pass.
//!
//! Subgradient conventions: `relu`, `sqrt` and `row_norms` have derivative 0
//! at their kink, and `max_axis` routes the gradient to the first maximal
//! element.

use crate::error::{Error, Result};

/// Dense matrix, row-major. Scalars are `1×1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    pub fn from_rows(rows: &[[f64; 2]]) -> Self {
        Self {
            rows: rows.len(),
            cols: 2,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `c = beta * c + op(a) * op(b)` where `op` optionally transposes.
///
/// `a` is stored as `m×k` (or `k×m` when `ta`), `b` as `k×n` (or `n×k`).
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, beta: f64, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every access made with these strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Reduction axis: `Rows` reduces over rows (one result per column),
/// `Cols` reduces over columns (one result per row).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddBias(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    MulScalarVar(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    ConcatCols(Vec<usize>),
    SliceRows(usize, usize),
    Relu(usize),
    Exp(usize),
    Square(usize),
    Sqrt(usize),
    Sum(usize),
    SumAxis(usize, Axis),
    MaxAxis(usize, Vec<usize>),
    Softmax(usize, Axis),
    RowNorms(usize),
    SqDist(usize, usize),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every node that needs them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<[usize; 2]>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`; zeros when unreachable.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let [r, c] = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    Ok(())
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

    fn push(&mut self, value: Tensor, op: Op, parents: &[usize]) -> Var {
        let needs_grad = parents.iter().any(|&p| self.nodes[p].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("add", self.val(a), self.val(b))?;
        let v = self.val(a).zip(self.val(b), |x, y| x + y);
        Ok(self.push(v, Op::Add(a.0, b.0), &[a.0, b.0]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("sub", self.val(a), self.val(b))?;
        let v = self.val(a).zip(self.val(b), |x, y| x - y);
        Ok(self.push(v, Op::Sub(a.0, b.0), &[a.0, b.0]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("mul", self.val(a), self.val(b))?;
        let v = self.val(a).zip(self.val(b), |x, y| x * y);
        Ok(self.push(v, Op::Mul(a.0, b.0), &[a.0, b.0]))
    }

    /// Adds a `1×c` row vector to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.val(a), self.val(bias));
        if bv.rows != 1 || bv.cols != av.cols {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                lhs: av.shape(),
                rhs: bv.shape(),
            });
        }
        let mut v = av.clone();
        for row in v.data.chunks_mut(av.cols.max(1)) {
            for (x, b) in row.iter_mut().zip(&bv.data) {
                *x += b;
            }
        }
        Ok(self.push(v, Op::AddBias(a.0, bias.0), &[a.0, bias.0]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.val(a).map(|x| x * c);
        self.push(v, Op::Scale(a.0, c), &[a.0])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.val(a).map(|x| x + c);
        self.push(v, Op::AddScalar(a.0), &[a.0])
    }

    /// Multiplies every element of `a` by the `1×1` node `s`.
    pub fn mul_scalar_var(&mut self, a: Var, s: Var) -> Result<Var> {
        let sv = self.val(s);
        if sv.shape() != [1, 1] {
            return Err(Error::ShapeMismatch {
                op: "mul_scalar_var",
                lhs: self.val(a).shape(),
                rhs: sv.shape(),
            });
        }
        let c = sv.item();
        let v = self.val(a).map(|x| x * c);
        Ok(self.push(v, Op::MulScalarVar(a.0, s.0), &[a.0, s.0]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.val(a), self.val(b));
        if av.cols != bv.rows {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: av.shape(),
                rhs: bv.shape(),
            });
        }
        let (m, k, n) = (av.rows, av.cols, bv.cols);
        let mut out = Tensor::zeros(m, n);
        gemm(m, k, n, &av.data, false, &bv.data, false, 0.0, &mut out.data);
        Ok(self.push(out, Op::MatMul(a.0, b.0), &[a.0, b.0]))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = transposed(self.val(a));
        self.push(v, Op::Transpose(a.0), &[a.0])
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|p| self.val(*p).rows)
            .ok_or_else(|| Error::InvalidInput("concat_cols of nothing".into()))?;
        for p in parts {
            if self.val(*p).rows != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.val(parts[0]).shape(),
                    rhs: self.val(*p).shape(),
                });
            }
        }
        let cols: usize = parts.iter().map(|p| self.val(*p).cols).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for p in parts {
                let pv = self.val(*p);
                out.data[r * cols + off..r * cols + off + pv.cols].copy_from_slice(pv.row(r));
                off += pv.cols;
            }
        }
        let idx: Vec<usize> = parts.iter().map(|p| p.0).collect();
        Ok(self.push(out, Op::ConcatCols(idx.clone()), &idx))
    }

    /// Rows `start..end` of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let av = self.val(a);
        if start > end || end > av.rows {
            return Err(Error::InvalidInput(format!(
                "slice_rows {start}..{end} of {} rows",
                av.rows
            )));
        }
        let v = Tensor {
            rows: end - start,
            cols: av.cols,
            data: av.data[start * av.cols..end * av.cols].to_vec(),
        };
        Ok(self.push(v, Op::SliceRows(a.0, start), &[a.0]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.val(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a.0), &[a.0])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.val(a).map(f64::exp);
        self.push(v, Op::Exp(a.0), &[a.0])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.val(a).map(|x| x * x);
        self.push(v, Op::Square(a.0), &[a.0])
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.val(a).map(f64::sqrt);
        self.push(v, Op::Sqrt(a.0), &[a.0])
    }

    /// Sum of all elements, as a `1×1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.val(a).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a.0), &[a.0])
    }

    pub fn sum_axis(&mut self, a: Var, axis: Axis) -> Var {
        let av = self.val(a);
        let v = match axis {
            Axis::Rows => {
                let mut out = Tensor::zeros(1, av.cols);
                for r in 0..av.rows {
                    for (o, x) in out.data.iter_mut().zip(av.row(r)) {
                        *o += x;
                    }
                }
                out
            }
            Axis::Cols => Tensor {
                rows: av.rows,
                cols: 1,
                data: (0..av.rows).map(|r| av.row(r).iter().sum()).collect(),
            },
        };
        self.push(v, Op::SumAxis(a.0, axis), &[a.0])
    }

    /// Maximum along an axis; ties resolve to the lowest index.
    pub fn max_axis(&mut self, a: Var, axis: Axis) -> Result<Var> {
        let av = self.val(a);
        if av.rows == 0 || av.cols == 0 {
            return Err(Error::InvalidInput("max over an empty axis".into()));
        }
        let (outer, inner) = match axis {
            Axis::Rows => (av.cols, av.rows),
            Axis::Cols => (av.rows, av.cols),
        };
        let at = |o: usize, i: usize| match axis {
            Axis::Rows => i * av.cols + o,
            Axis::Cols => o * av.cols + i,
        };
        let mut arg = Vec::with_capacity(outer);
        let mut vals = Vec::with_capacity(outer);
        for o in 0..outer {
            let mut best = at(o, 0);
            for i in 1..inner {
                let idx = at(o, i);
                if av.data[idx] > av.data[best] {
                    best = idx;
                }
            }
            arg.push(best);
            vals.push(av.data[best]);
        }
        let v = match axis {
            Axis::Rows => Tensor::from_vec(1, outer, vals)?,
            Axis::Cols => Tensor::from_vec(outer, 1, vals)?,
        };
        Ok(self.push(v, Op::MaxAxis(a.0, arg), &[a.0]))
    }

    /// Numerically stable softmax along an axis.
    pub fn softmax(&mut self, a: Var, axis: Axis) -> Var {
        let av = self.val(a);
        let mut out = av.clone();
        let (rows, cols) = (av.rows, av.cols);
        match axis {
            Axis::Cols => {
                for r in 0..rows {
                    softmax_strided(&mut out.data, r * cols, 1, cols);
                }
            }
            Axis::Rows => {
                for c in 0..cols {
                    softmax_strided(&mut out.data, c, cols, rows);
                }
            }
        }
        self.push(out, Op::Softmax(a.0, axis), &[a.0])
    }

    /// Euclidean norm of each row, as a column.
    pub fn row_norms(&mut self, a: Var) -> Var {
        let av = self.val(a);
        let v = Tensor {
            rows: av.rows,
            cols: 1,
            data: (0..av.rows)
                .map(|r| av.row(r).iter().map(|x| x * x).sum::<f64>().sqrt())
                .collect(),
        };
        self.push(v, Op::RowNorms(a.0), &[a.0])
    }

    /// Sum over rows of the Euclidean row norms.
    pub fn l1_norm_rows(&mut self, a: Var) -> Var {
        let n = self.row_norms(a);
        self.sum(n)
    }

    /// Pairwise squared distances between the rows of `a` (`n×c`) and `b` (`m×c`).
    pub fn sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.val(a), self.val(b));
        if av.cols != bv.cols {
            return Err(Error::ShapeMismatch {
                op: "sq_dist",
                lhs: av.shape(),
                rhs: bv.shape(),
            });
        }
        let mut out = Tensor::zeros(av.rows, bv.rows);
        for i in 0..av.rows {
            let ai = av.row(i);
            for j in 0..bv.rows {
                out.data[i * bv.rows + j] = ai
                    .iter()
                    .zip(bv.row(j))
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
            }
        }
        Ok(self.push(out, Op::SqDist(a.0, b.0), &[a.0, b.0]))
    }

    /// Back-propagates from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let shape = self.val(root).shape();
        if shape != [1, 1] {
            return Err(Error::NonScalarRoot(shape));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::scalar(1.0));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let nodes = &self.nodes;
        let mut acc = |p: usize, f: &mut dyn FnMut(&mut Tensor)| {
            if !nodes[p].needs_grad {
                return;
            }
            let slot = grads[p].get_or_insert_with(|| {
                let [r, c] = nodes[p].value.shape();
                Tensor::zeros(r, c)
            });
            f(slot);
        };
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |s| s.add_assign(g));
                acc(*b, &mut |s| s.add_assign(g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| s.add_assign(g));
                acc(*b, &mut |s| {
                    for (x, d) in s.data.iter_mut().zip(&g.data) {
                        *x -= d;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                acc(*a, &mut |s| {
                    for ((x, d), o) in s.data.iter_mut().zip(&g.data).zip(&bv.data) {
                        *x += d * o;
                    }
                });
                acc(*b, &mut |s| {
                    for ((x, d), o) in s.data.iter_mut().zip(&g.data).zip(&av.data) {
                        *x += d * o;
                    }
                });
            }
            Op::AddBias(a, b) => {
                acc(*a, &mut |s| s.add_assign(g));
                acc(*b, &mut |s| {
                    for row in g.data.chunks(g.cols.max(1)) {
                        for (x, d) in s.data.iter_mut().zip(row) {
                            *x += d;
                        }
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |s| {
                for (x, d) in s.data.iter_mut().zip(&g.data) {
                    *x += c * d;
                }
            }),
            Op::AddScalar(a) => acc(*a, &mut |s| s.add_assign(g)),
            Op::MulScalarVar(a, sv) => {
                let c = nodes[*sv].value.item();
                let av = &nodes[*a].value;
                acc(*a, &mut |s| {
                    for (x, d) in s.data.iter_mut().zip(&g.data) {
                        *x += c * d;
                    }
                });
                acc(*sv, &mut |s| {
                    s.data[0] += g.data.iter().zip(&av.data).map(|(d, x)| d * x).sum::<f64>();
                });
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                let (m, k, n) = (av.rows, av.cols, bv.cols);
                // dA = G Bᵀ, dB = Aᵀ G
                acc(*a, &mut |s| gemm(m, n, k, &g.data, false, &bv.data, true, 1.0, &mut s.data));
                acc(*b, &mut |s| gemm(k, m, n, &av.data, true, &g.data, false, 1.0, &mut s.data));
            }
            Op::Transpose(a) => acc(*a, &mut |s| s.add_assign(&transposed(g))),
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pc = nodes[p].value.cols;
                    acc(p, &mut |s| {
                        for r in 0..g.rows {
                            for c in 0..pc {
                                s.data[r * pc + c] += g.data[r * g.cols + off + c];
                            }
                        }
                    });
                    off += pc;
                }
            }
            Op::SliceRows(a, start) => {
                let cols = g.cols;
                acc(*a, &mut |s| {
                    for (x, d) in s.data[start * cols..].iter_mut().zip(&g.data) {
                        *x += d;
                    }
                });
            }
            Op::Relu(a) => {
                let av = &nodes[*a].value;
                acc(*a, &mut |s| {
                    for ((x, d), i) in s.data.iter_mut().zip(&g.data).zip(&av.data) {
                        if *i > 0.0 {
                            *x += d;
                        }
                    }
                });
            }
            Op::Exp(a) => acc(*a, &mut |s| {
                for ((x, d), e) in s.data.iter_mut().zip(&g.data).zip(&y.data) {
                    *x += d * e;
                }
            }),
            Op::Square(a) => {
                let av = &nodes[*a].value;
                acc(*a, &mut |s| {
                    for ((x, d), i) in s.data.iter_mut().zip(&g.data).zip(&av.data) {
                        *x += 2.0 * i * d;
                    }
                });
            }
            Op::Sqrt(a) => acc(*a, &mut |s| {
                for ((x, d), r) in s.data.iter_mut().zip(&g.data).zip(&y.data) {
                    if *r > 0.0 {
                        *x += d / (2.0 * r);
                    }
                }
            }),
            Op::Sum(a) => {
                let d = g.item();
                acc(*a, &mut |s| s.data.iter_mut().for_each(|x| *x += d));
            }
            Op::SumAxis(a, axis) => acc(*a, &mut |s| {
                let cols = s.cols;
                for (idx, x) in s.data.iter_mut().enumerate() {
                    *x += match axis {
                        Axis::Rows => g.data[idx % cols],
                        Axis::Cols => g.data[idx / cols],
                    };
                }
            }),
            Op::MaxAxis(a, arg) => acc(*a, &mut |s| {
                for (d, &idx) in g.data.iter().zip(arg) {
                    s.data[idx] += d;
                }
            }),
            Op::Softmax(a, axis) => {
                let (rows, cols) = (y.rows, y.cols);
                acc(*a, &mut |s| match axis {
                    Axis::Cols => {
                        for r in 0..rows {
                            let span = r * cols..(r + 1) * cols;
                            let dot: f64 = g.data[span.clone()]
                                .iter()
                                .zip(&y.data[span.clone()])
                                .map(|(d, p)| d * p)
                                .sum();
                            for i in span {
                                s.data[i] += y.data[i] * (g.data[i] - dot);
                            }
                        }
                    }
                    Axis::Rows => {
                        for c in 0..cols {
                            let dot: f64 = (0..rows)
                                .map(|r| g.data[r * cols + c] * y.data[r * cols + c])
                                .sum();
                            for r in 0..rows {
                                let i = r * cols + c;
                                s.data[i] += y.data[i] * (g.data[i] - dot);
                            }
                        }
                    }
                });
            }
            Op::RowNorms(a) => {
                let av = &nodes[*a].value;
                acc(*a, &mut |s| {
                    let cols = av.cols;
                    for r in 0..av.rows {
                        let n = y.data[r];
                        if n > 0.0 {
                            let f = g.data[r] / n;
                            for c in 0..cols {
                                s.data[r * cols + c] += f * av.data[r * cols + c];
                            }
                        }
                    }
                });
            }
            Op::SqDist(a, b) => {
                let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                let (n, m, c) = (av.rows, bv.rows, av.cols);
                acc(*a, &mut |s| {
                    for i in 0..n {
                        for j in 0..m {
                            let w = 2.0 * g.data[i * m + j];
                            if w != 0.0 {
                                for k in 0..c {
                                    s.data[i * c + k] += w * (av.data[i * c + k] - bv.data[j * c + k]);
                                }
                            }
                        }
                    }
                });
                acc(*b, &mut |s| {
                    for i in 0..n {
                        for j in 0..m {
                            let w = 2.0 * g.data[i * m + j];
                            if w != 0.0 {
                                for k in 0..c {
                                    s.data[j * c + k] -= w * (av.data[i * c + k] - bv.data[j * c + k]);
                                }
                            }
                        }
                    }
                });
            }
        }
    }
}

fn transposed(t: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(t.cols, t.rows);
    for r in 0..t.rows {
        for c in 0..t.cols {
            out.data[c * t.rows + r] = t.data[r * t.cols + c];
        }
    }
    out
}

fn softmax_strided(data: &mut [f64], start: usize, stride: usize, count: usize) {
    let idx = (0..count).map(|i| start + i * stride);
    let max = idx.clone().fold(f64::NEG_INFINITY, |m, i| m.max(data[i]));
    let mut total = 0.0;
    for i in idx.clone() {
        data[i] = (data[i] - max).exp();
        total += data[i];
    }
    for i in idx {
        data[i] /= total;
    }
}

/// Largest relative discrepancy between `analytic` and central differences
/// of `loss_fn` at `params`, measured as `|a - n| / max(1, |n|)`.
pub fn finite_difference_check<F>(loss_fn: F, params: &[f64], analytic: &[f64], step: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let coords: Vec<usize> = (0..params.len()).collect();
    finite_difference_check_coords(loss_fn, params, analytic, step, &coords)
}

/// Same as [`finite_difference_check`], restricted to `coords`.
pub fn finite_difference_check_coords<F>(
    mut loss_fn: F,
    params: &[f64],
    analytic: &[f64],
    step: f64,
    coords: &[usize],
) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(step > 0.0);
    assert_eq!(params.len(), analytic.len());
    let mut x = params.to_vec();
    let mut worst: f64 = 0.0;
    for &i in coords {
        let orig = x[i];
        x[i] = orig + step;
        let up = loss_fn(&x);
        x[i] = orig - step;
        let down = loss_fn(&x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let err = (analytic[i] - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::from_vec(rows, cols, data.to_vec()).unwrap()
    }

    /// Checks every op's backward against central differences through a
    /// scalar readout `sum(out * weights)`.
    fn check_unary(build: impl Fn(&mut Tape, Var) -> Var, input: Tensor) {
        let eval = |x: &[f64], grad: bool| {
            let mut tape = Tape::new();
            let v = tape.param(Tensor::from_vec(input.rows, input.cols, x.to_vec()).unwrap());
            let out = build(&mut tape, v);
            let n = tape.value(out).data.len();
            let w = tape.constant(
                Tensor::from_vec(
                    tape.value(out).rows,
                    tape.value(out).cols,
                    (0..n).map(|i| 0.3 + 0.17 * i as f64).collect(),
                )
                .unwrap(),
            );
            let p = tape.mul(out, w).unwrap();
            let s = tape.sum(p);
            let val = tape.item(s);
            let g = grad.then(|| tape.backward(s).unwrap().wrt(v).into_data());
            (val, g)
        };
        let (_, g) = eval(input.data(), true);
        let err = finite_difference_check(|x| eval(x, false).0, input.data(), &g.unwrap(), 1e-6);
        assert!(err < 1e-7, "fd error {err}");
    }

    #[test]
    fn elementary_values() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::scalar(-3.0));
        let r = tape.relu(a);
        assert_eq!(tape.item(r), 0.0);

        let z = tape.constant(t(1, 2, &[0.0, 0.0]));
        let s = tape.softmax(z, Axis::Cols);
        assert_eq!(tape.value(s).data(), &[0.5, 0.5]);

        let a = tape.constant(t(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = tape.constant(t(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]));
        let p = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(p).data(), &[1.0, 2.0, 4.0, 5.0]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut tape = Tape::new();
        let w = tape.param(t(1, 2, &[1.0, 2.0]));
        let sq = tape.square(w);
        let s = tape.sum(sq);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(w).data(), &[2.0, 4.0]);
    }

    #[test]
    fn constant_root_has_zero_gradient() {
        let mut tape = Tape::new();
        let w = tape.param(t(1, 2, &[1.0, 2.0]));
        let c = tape.constant(t(1, 2, &[3.0, 4.0]));
        let s = tape.sum(c);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(w).data(), &[0.0, 0.0]);
        assert!(g.get(w).is_none());
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut tape = Tape::new();
        let w = tape.param(t(1, 2, &[1.0, 2.0]));
        assert!(matches!(tape.backward(w), Err(Error::NonScalarRoot([1, 2]))));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut tape = Tape::new();
        let a = tape.param(t(1, 2, &[1.0, 2.0]));
        let b = tape.param(t(2, 1, &[1.0, 2.0]));
        assert!(matches!(tape.add(a, b), Err(Error::ShapeMismatch { op: "add", .. })));
        assert!(tape.matmul(a, a).is_err());
    }

    #[test]
    fn max_routes_to_first_argmax() {
        let mut tape = Tape::new();
        let a = tape.param(t(2, 3, &[1.0, 5.0, 5.0, 2.0, 2.0, 0.0]));
        let m = tape.max_axis(a, Axis::Cols).unwrap();
        assert_eq!(tape.value(m).data(), &[5.0, 2.0]);
        let s = tape.sum(m);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(a).data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);

        let mut tape = Tape::new();
        let a = tape.param(t(2, 2, &[1.0, 7.0, 1.0, 3.0]));
        let m = tape.max_axis(a, Axis::Rows).unwrap();
        let s = tape.sum(m);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(a).data(), &[1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn kinks_have_zero_gradient() {
        let mut tape = Tape::new();
        let a = tape.param(t(1, 2, &[0.0, 0.0]));
        let r = tape.relu(a);
        let q = tape.sqrt(a);
        let n = tape.row_norms(a);
        let s1 = tape.sum(r);
        let s2 = tape.sum(q);
        let s3 = tape.sum(n);
        let s12 = tape.add(s1, s2).unwrap();
        let s = tape.add(s12, s3).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(a).data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_is_deterministic() {
        let build = || {
            let mut tape = Tape::new();
            let a = tape.param(t(3, 2, &[0.1, -0.2, 0.3, 0.4, -0.5, 0.6]));
            let b = tape.constant(t(2, 2, &[0.2, 0.1, -0.3, 0.7]));
            let d = tape.sq_dist(a, b).unwrap();
            let sm = tape.softmax(d, Axis::Rows);
            let s = tape.sum(sm);
            let sq = tape.square(d);
            let s2 = tape.sum(sq);
            let tot = tape.add(s, s2).unwrap();
            tape.backward(tot).unwrap().wrt(a)
        };
        assert_eq!(build(), build());
    }

    #[test]
    fn op_gradients_match_finite_differences() {
        let x = t(3, 2, &[0.3, -0.7, 1.1, 0.2, -0.4, 0.9]);
        let sq = t(3, 2, &[0.3, 0.7, 1.1, 0.2, 0.4, 0.9]);
        let w = t(2, 4, &[0.5, -0.1, 0.2, 0.3, 0.8, -0.6, 0.1, 0.4]);
        check_unary(|tp, v| tp.exp(v), x.clone());
        check_unary(|tp, v| tp.square(v), x.clone());
        check_unary(|tp, v| tp.sqrt(v), sq);
        check_unary(|tp, v| tp.relu(v), x.clone());
        check_unary(|tp, v| tp.transpose(v), x.clone());
        check_unary(|tp, v| tp.softmax(v, Axis::Rows), x.clone());
        check_unary(|tp, v| tp.softmax(v, Axis::Cols), x.clone());
        check_unary(|tp, v| tp.sum_axis(v, Axis::Rows), x.clone());
        check_unary(|tp, v| tp.sum_axis(v, Axis::Cols), x.clone());
        check_unary(|tp, v| tp.max_axis(v, Axis::Cols).unwrap(), x.clone());
        check_unary(|tp, v| tp.row_norms(v), x.clone());
        check_unary(|tp, v| tp.slice_rows(v, 1, 3).unwrap(), x.clone());
        check_unary(|tp, v| tp.add_scalar(v, 2.0), x.clone());
        check_unary(|tp, v| tp.scale(v, -1.5), x.clone());
        check_unary(
            |tp, v| {
                let c = tp.constant(w.clone());
                tp.matmul(v, c).unwrap()
            },
            x.clone(),
        );
        check_unary(
            |tp, v| {
                let c = tp.constant(x.clone());
                tp.matmul(c, v).unwrap()
            },
            w.clone(),
        );
        check_unary(
            |tp, v| {
                let o = tp.constant(t(2, 2, &[0.1, 0.2, -0.3, 0.5]));
                tp.sq_dist(v, o).unwrap()
            },
            x.clone(),
        );
        check_unary(
            |tp, v| {
                let o = tp.constant(x.clone());
                tp.sq_dist(o, v).unwrap()
            },
            t(2, 2, &[0.1, 0.2, -0.3, 0.5]),
        );
        check_unary(
            |tp, v| {
                let s = tp.slice_rows(v, 0, 1).unwrap();
                let s = tp.slice_rows(s, 0, 1).unwrap();
                let s = tp.sum(s);
                tp.mul_scalar_var(v, s).unwrap()
            },
            x.clone(),
        );
        check_unary(
            |tp, v| {
                let b = tp.slice_rows(v, 2, 3).unwrap();
                tp.add_bias(v, b).unwrap()
            },
            x.clone(),
        );
        check_unary(
            |tp, v| {
                let e = tp.exp(v);
                let m = tp.mul(v, e).unwrap();
                let s = tp.sub(m, v).unwrap();
                tp.concat_cols(&[s, v, e]).unwrap()
            },
            x,
        );
    }

    #[test]
    fn fd_check_on_quadratic_is_tight() {
        let p = [0.3, -1.2, 2.5];
        let grad: Vec<f64> = p.iter().map(|x| 2.0 * x + 1.0).collect();
        let err = finite_difference_check(
            |x| x.iter().map(|v| v * v + v).sum(),
            &p,
            &grad,
            1e-4,
        );
        assert!(err < 1e-8, "{err}");
    }
}
