//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Graph`] is a tape: every operation evaluates eagerly, pushes a node holding
//! its value and its inputs, and [`Graph::backward`] walks the tape in reverse.
//! Parameters enter through [`Graph::param`], which memoizes one leaf per
//! [`ParamId`] so a weight reused across time steps accumulates a single gradient.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numeric::Matrix;
use crate::params::{ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    MatMulT(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    MulCol(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Softplus(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Sqrt(NodeId),
    Abs(NodeId),
    Square(NodeId),
    ClampMin(NodeId, f64),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    SliceCols(NodeId, usize),
    GatherRows(NodeId, Vec<usize>),
    SelectRows {
        fresh: NodeId,
        stale: NodeId,
        mask: Vec<bool>,
    },
    SumAll(NodeId),
    ColumnSums(NodeId),
    RowSums(NodeId),
    RowLogSumExp(NodeId),
    Diag(NodeId),
}

struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, NodeId>,
}

/// Gradients of one scalar with respect to every node on the tape.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    params: Vec<(ParamId, NodeId)>,
}

impl Gradients {
    pub fn node(&self, id: NodeId) -> Option<&Matrix> {
        self.grads[id.0].as_ref()
    }

    /// Gradient for `param`, `None` when it did not influence the loss.
    pub fn param(&self, param: ParamId) -> Option<&Matrix> {
        self.params
            .iter()
            .find(|(p, _)| *p == param)
            .and_then(|(_, n)| self.grads[n.0].as_ref())
    }

    /// One gradient per parameter of `store`, zero-filled where absent.
    pub fn dense(&self, store: &ParamStore) -> Vec<Matrix> {
        let mut out: Vec<Matrix> = store
            .iter()
            .map(|(_, p)| Matrix::zeros(p.value.rows(), p.value.cols()))
            .collect();
        for (pid, nid) in &self.params {
            if let Some(g) = &self.grads[nid.0] {
                out[pid.index()] = g.clone();
            }
        }
        out
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Matrix, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    fn check(&self, cond: bool, what: impl FnOnce() -> String) -> Result<()> {
        if cond {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(what()))
        }
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// The trainable leaf for `id`, created on first use.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(&n) = self.params.get(&id) {
            return n;
        }
        let n = self.push(store.value(id).clone(), Op::Leaf);
        self.params.insert(id, n);
        n
    }

    /// A copy of the parameter's current value as a constant (frozen weights).
    pub fn frozen(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.constant(store.value(id).clone())
    }

    /// Constant copy of `id`'s value; gradients stop here.
    pub fn detach(&mut self, id: NodeId) -> NodeId {
        let v = self.value(id).clone();
        self.constant(v)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        self.check(sa.1 == sb.0, || format!("matmul {sa:?} x {sb:?}"))?;
        let v = self.value(a).matmul_unchecked(self.value(b));
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        self.check(sa.1 == sb.1, || format!("matmul_t {sa:?} x {sb:?}ᵀ"))?;
        let v = self.value(a).matmul_t(self.value(b));
        Ok(self.push(v, Op::MatMulT(a, b)))
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        self.check(sa == sb, || format!("{what} {sa:?} vs {sb:?}"))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "sub")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "mul")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "div")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x / y);
        Ok(self.push(v, Op::Div(a, b)))
    }

    /// `a + row` with `row` (1 × m) broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        self.check(sr == (1, sa.1), || format!("add_row {sa:?} + {sr:?}"))?;
        let mut v = self.value(a).clone();
        let r = self.value(row).as_slice().to_vec();
        for i in 0..sa.0 {
            for (x, b) in v.row_mut(i).iter_mut().zip(&r) {
                *x += b;
            }
        }
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    /// `a ⊙ col` with `col` (n × 1) broadcast over the columns of `a`.
    pub fn mul_col(&mut self, a: NodeId, col: NodeId) -> Result<NodeId> {
        let (sa, sc) = (self.shape(a), self.shape(col));
        self.check(sc == (sa.0, 1), || format!("mul_col {sa:?} * {sc:?}"))?;
        let mut v = self.value(a).clone();
        let c = self.value(col).as_slice().to_vec();
        for (i, &ci) in c.iter().enumerate() {
            v.row_mut(i).iter_mut().for_each(|x| *x *= ci);
        }
        Ok(self.push(v, Op::MulCol(a, col)))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).scale(c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddScalar(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(softplus);
        self.push(v, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Log(a))
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::sqrt);
        self.push(v, Op::Sqrt(a))
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::abs);
        self.push(v, Op::Abs(a))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a))
    }

    /// `max(a, floor)` elementwise; clamped entries pass no gradient.
    pub fn clamp_min(&mut self, a: NodeId, floor: f64) -> NodeId {
        let v = self.value(a).map(|x| x.max(floor));
        self.push(v, Op::ClampMin(a, floor))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let rows = parts.first().map_or(0, |&p| self.shape(p).0);
        self.check(parts.iter().all(|&p| self.shape(p).0 == rows), || {
            "concat_cols row counts differ".into()
        })?;
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut v = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                v.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let cols = parts.first().map_or(0, |&p| self.shape(p).1);
        self.check(parts.iter().all(|&p| self.shape(p).1 == cols), || {
            "concat_rows column counts differ".into()
        })?;
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).as_slice());
        }
        let rows = data.len() / cols.max(1);
        let v = Matrix::from_vec(if cols == 0 { 0 } else { rows }, cols, data)?;
        Ok(self.push(v, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (n, m) = self.shape(a);
        self.check(start + len <= m, || format!("slice_cols {start}+{len} of {m}"))?;
        let mut v = Matrix::zeros(n, len);
        for r in 0..n {
            v.row_mut(r)
                .copy_from_slice(&self.value(a).row(r)[start..start + len]);
        }
        Ok(self.push(v, Op::SliceCols(a, start)))
    }

    pub fn gather_rows(&mut self, a: NodeId, indices: &[usize]) -> Result<NodeId> {
        let n = self.shape(a).0;
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::DimensionMismatch(format!("gather row {bad} of {n}")));
        }
        let v = self.value(a).select_rows(indices);
        Ok(self.push(v, Op::GatherRows(a, indices.to_vec())))
    }

    /// Row `i` from `fresh` where `mask[i]`, else from `stale`.
    pub fn select_rows(&mut self, fresh: NodeId, stale: NodeId, mask: &[bool]) -> Result<NodeId> {
        self.same_shape(fresh, stale, "select_rows")?;
        self.check(mask.len() == self.shape(fresh).0, || "select_rows mask length".into())?;
        let mut v = self.value(stale).clone();
        for (i, &m) in mask.iter().enumerate() {
            if m {
                v.row_mut(i).copy_from_slice(self.value(fresh).row(i));
            }
        }
        Ok(self.push(
            v,
            Op::SelectRows {
                fresh,
                stale,
                mask: mask.to_vec(),
            },
        ))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Matrix::scalar(self.value(a).sum());
        self.push(v, Op::SumAll(a))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Sum over rows: `n × m → 1 × m`.
    pub fn column_sums(&mut self, a: NodeId) -> NodeId {
        let (_, m) = self.shape(a);
        let mut out = vec![0.0; m];
        for r in self.value(a).row_iter() {
            for (o, x) in out.iter_mut().zip(r) {
                *o += x;
            }
        }
        self.push(Matrix::row_vector(&out), Op::ColumnSums(a))
    }

    /// Sum over columns: `n × m → n × 1`.
    pub fn row_sums(&mut self, a: NodeId) -> NodeId {
        let out: Vec<f64> = self.value(a).row_iter().map(|r| r.iter().sum()).collect();
        self.push(Matrix::column_vector(&out), Op::RowSums(a))
    }

    /// `log Σ_j exp(a_ij)` per row: `n × m → n × 1`.
    pub fn row_logsumexp(&mut self, a: NodeId) -> NodeId {
        let out: Vec<f64> = self
            .value(a)
            .row_iter()
            .map(|r| {
                let mx = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                mx + r.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
            })
            .collect();
        self.push(Matrix::column_vector(&out), Op::RowLogSumExp(a))
    }

    /// Diagonal of a square matrix as `n × 1`.
    pub fn diag(&mut self, a: NodeId) -> Result<NodeId> {
        let (n, m) = self.shape(a);
        self.check(n == m, || format!("diag of {n}x{m}"))?;
        let out: Vec<f64> = (0..n).map(|i| self.value(a)[(i, i)]).collect();
        Ok(self.push(Matrix::column_vector(&out), Op::Diag(a)))
    }

    /// Rows scaled to unit Euclidean norm.
    pub fn normalize_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let sq = self.square(a);
        let ss = self.row_sums(sq);
        let norm = self.sqrt(ss);
        let ones = self.constant(Matrix::filled(self.shape(a).0, 1, 1.0));
        let inv = self.div(ones, norm)?;
        self.mul_col(a, inv)
    }

    /// Gradients of the scalar node `loss` with respect to every node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::DimensionMismatch(format!(
                "backward from non-scalar {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));

        fn acc(grads: &mut [Option<Matrix>], id: NodeId, g: Matrix) {
            match &mut grads[id.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(dc) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let y = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = dc.matmul_t(self.value(*b));
                    let gb = self.value(*a).t_matmul(&dc);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = dc.matmul_unchecked(self.value(*b));
                    let gb = dc.t_matmul(self.value(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, dc.clone());
                    acc(&mut grads, *b, dc.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, dc.scale(-1.0));
                    acc(&mut grads, *a, dc.clone());
                }
                Op::Mul(a, b) => {
                    acc(&mut grads, *a, dc.zip_map(self.value(*b), |g, x| g * x));
                    acc(&mut grads, *b, dc.zip_map(self.value(*a), |g, x| g * x));
                }
                Op::Div(a, b) => {
                    let bv = self.value(*b);
                    acc(&mut grads, *a, dc.zip_map(bv, |g, x| g / x));
                    let gb = dc.zip_map(y, |g, q| g * q).zip_map(bv, |gq, x| -gq / x);
                    acc(&mut grads, *b, gb);
                }
                Op::AddRow(a, row) => {
                    let mut gr = vec![0.0; dc.cols()];
                    for r in dc.row_iter() {
                        for (o, x) in gr.iter_mut().zip(r) {
                            *o += x;
                        }
                    }
                    acc(&mut grads, *row, Matrix::row_vector(&gr));
                    acc(&mut grads, *a, dc.clone());
                }
                Op::MulCol(a, col) => {
                    let av = self.value(*a);
                    let cv = self.value(*col);
                    let mut ga = dc.clone();
                    let mut gc = vec![0.0; cv.rows()];
                    for i in 0..cv.rows() {
                        let ci = cv.as_slice()[i];
                        gc[i] = dc.row(i).iter().zip(av.row(i)).map(|(g, x)| g * x).sum();
                        ga.row_mut(i).iter_mut().for_each(|g| *g *= ci);
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *col, Matrix::column_vector(&gc));
                }
                Op::Scale(a, c) => acc(&mut grads, *a, dc.scale(*c)),
                Op::AddScalar(a) => acc(&mut grads, *a, dc.clone()),
                Op::Sigmoid(a) => acc(&mut grads, *a, dc.zip_map(y, |g, s| g * s * (1.0 - s))),
                Op::Tanh(a) => acc(&mut grads, *a, dc.zip_map(y, |g, t| g * (1.0 - t * t))),
                Op::Relu(a) => {
                    let g = dc.zip_map(self.value(*a), |g, x| if x > 0.0 { g } else { 0.0 });
                    acc(&mut grads, *a, g)
                }
                Op::Softplus(a) => {
                    acc(&mut grads, *a, dc.zip_map(self.value(*a), |g, x| g * sigmoid(x)))
                }
                Op::Exp(a) => acc(&mut grads, *a, dc.zip_map(y, |g, e| g * e)),
                Op::Log(a) => acc(&mut grads, *a, dc.zip_map(self.value(*a), |g, x| g / x)),
                Op::Sqrt(a) => acc(&mut grads, *a, dc.zip_map(y, |g, s| g / (2.0 * s))),
                Op::Abs(a) => {
                    let g = dc.zip_map(self.value(*a), |g, x| {
                        if x > 0.0 {
                            g
                        } else if x < 0.0 {
                            -g
                        } else {
                            0.0
                        }
                    });
                    acc(&mut grads, *a, g)
                }
                Op::Square(a) => {
                    acc(&mut grads, *a, dc.zip_map(self.value(*a), |g, x| 2.0 * g * x))
                }
                Op::ClampMin(a, floor) => {
                    let f = *floor;
                    let g = dc.zip_map(self.value(*a), |g, x| if x >= f { g } else { 0.0 });
                    acc(&mut grads, *a, g)
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let (n, m) = self.shape(p);
                        let mut g = Matrix::zeros(n, m);
                        for r in 0..n {
                            g.row_mut(r).copy_from_slice(&dc.row(r)[off..off + m]);
                        }
                        off += m;
                        acc(&mut grads, p, g);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let (n, m) = self.shape(p);
                        let g = Matrix::from_vec(n, m, dc.as_slice()[off * m..(off + n) * m].to_vec())?;
                        off += n;
                        acc(&mut grads, p, g);
                    }
                }
                Op::SliceCols(a, start) => {
                    let (n, m) = self.shape(*a);
                    let mut g = Matrix::zeros(n, m);
                    let len = dc.cols();
                    for r in 0..n {
                        g.row_mut(r)[*start..*start + len].copy_from_slice(dc.row(r));
                    }
                    acc(&mut grads, *a, g);
                }
                Op::GatherRows(a, indices) => {
                    let (n, m) = self.shape(*a);
                    let mut g = Matrix::zeros(n, m);
                    for (k, &i) in indices.iter().enumerate() {
                        for (o, x) in g.row_mut(i).iter_mut().zip(dc.row(k)) {
                            *o += x;
                        }
                    }
                    acc(&mut grads, *a, g);
                }
                Op::SelectRows { fresh, stale, mask } => {
                    let (n, m) = dc.shape();
                    let mut gf = Matrix::zeros(n, m);
                    let mut gs = Matrix::zeros(n, m);
                    for (i, &sel) in mask.iter().enumerate() {
                        let dst = if sel { gf.row_mut(i) } else { gs.row_mut(i) };
                        dst.copy_from_slice(dc.row(i));
                    }
                    acc(&mut grads, *fresh, gf);
                    acc(&mut grads, *stale, gs);
                }
                Op::SumAll(a) => {
                    let (n, m) = self.shape(*a);
                    acc(&mut grads, *a, Matrix::filled(n, m, dc.item()));
                }
                Op::ColumnSums(a) => {
                    let (n, m) = self.shape(*a);
                    let mut g = Matrix::zeros(n, m);
                    for r in 0..n {
                        g.row_mut(r).copy_from_slice(dc.row(0));
                    }
                    acc(&mut grads, *a, g);
                }
                Op::RowSums(a) => {
                    let (n, m) = self.shape(*a);
                    let mut g = Matrix::zeros(n, m);
                    for r in 0..n {
                        let d = dc.as_slice()[r];
                        g.row_mut(r).iter_mut().for_each(|x| *x = d);
                    }
                    acc(&mut grads, *a, g);
                }
                Op::RowLogSumExp(a) => {
                    let av = self.value(*a);
                    let mut g = av.clone();
                    for r in 0..av.rows() {
                        let lse = y.as_slice()[r];
                        let d = dc.as_slice()[r];
                        g.row_mut(r).iter_mut().for_each(|x| *x = d * (*x - lse).exp());
                    }
                    acc(&mut grads, *a, g);
                }
                Op::Diag(a) => {
                    let (n, _) = self.shape(*a);
                    let mut g = Matrix::zeros(n, n);
                    for i in 0..n {
                        g[(i, i)] = dc.as_slice()[i];
                    }
                    acc(&mut grads, *a, g);
                }
            }
            grads[idx] = Some(dc);
        }

        Ok(Gradients {
            grads,
            params: self.params.iter().map(|(&p, &n)| (p, n)).collect(),
        })
    }
}
