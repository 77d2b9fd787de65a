//! Reverse-mode differentiation over matrix primitives.
//!
//! Every primitive evaluates eagerly and appends a node to the [`Tape`].
//! Nodes only reference earlier nodes, so the append order is already a
//! topological order and [`Tape::backward`] walks it in reverse.
//!
//! ```
//! use hilomix::numerics::{DenseMatrix, ParamStore, Tape};
//!
//! let mut store = ParamStore::new();
//! let w = store.add("w", DenseMatrix::scalar(0.0));
//! let mut tape = Tape::new();
//! let wv = tape.param(&store, w);
//! let y = tape.sigmoid(wv);
//! tape.backward(y, &mut store).unwrap();
//! assert!((store.gradient(w).item().unwrap() - 0.25).abs() < 1e-15);
//! ```

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::dense::{matmul_nt_into, matmul_tn_into};
use crate::numerics::sparse::spmm_raw;
use crate::numerics::{DenseMatrix, ParamId, ParamStore, SparseAdjacency};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Log(Var),
    Exp(Var),
    ClampMin(Var, f64),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Arc<[usize]>),
    NormalizeRows(Var, Vec<f64>),
    RowSum(Var),
    Sum(Var),
    Mean(Var),
    LogSoftmaxRows(Var),
    PickCols(Var, Arc<[usize]>),
    SpMM {
        adj: Arc<SparseAdjacency>,
        weights: Var,
        h: Var,
    },
    SymNormEdges {
        adj: Arc<SparseAdjacency>,
        edge_weights: Var,
        inv_sqrt_deg: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: DenseMatrix,
    op: Op,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<DenseMatrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&DenseMatrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    fn push(&mut self, value: DenseMatrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar_value(&self, v: Var) -> Result<f64> {
        self.value(v).item()
    }

    pub fn constant(&mut self, value: DenseMatrix) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    /// Adds a `1×c` row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, c) = self.shape(a);
        if self.shape(row) != (1, c) {
            return Err(Error::dim(
                "add_row",
                format!("{m}x{c} plus {:?}", self.shape(row)),
            ));
        }
        let mut value = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for i in 0..m {
            for (x, b) in value.row_mut(i).iter_mut().zip(&r) {
                *x += b;
            }
        }
        Ok(self.push(value, Op::AddRow(a, row)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.affine(a, k, 0.0)
    }

    /// `k·a + shift`, elementwise.
    pub fn affine(&mut self, a: Var, k: f64, shift: f64) -> Var {
        let value = self.value(a).map(|x| k * x + shift);
        self.push(value, Op::Affine(a, k))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(&x) = self.value(a).data().iter().find(|&&x| x <= 0.0 || x.is_nan()) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("argument {x} is not positive"),
            });
        }
        let value = self.value(a).map(f64::ln);
        Ok(self.push(value, Op::Log(a)))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        self.push(value, Op::Exp(a))
    }

    /// `max(a, lo)`; gradient passes only where `a > lo`.
    pub fn clamp_min(&mut self, a: Var, lo: f64) -> Var {
        let value = self.value(a).map(|x| x.max(lo));
        self.push(value, Op::ClampMin(a, lo))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Contract("concat_cols of nothing".into()));
        };
        let rows = self.shape(first).0;
        if parts.iter().any(|&p| self.shape(p).0 != rows) {
            return Err(Error::dim("concat_cols", "row counts differ"));
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        Ok(self.push(
            DenseMatrix::from_raw(rows, cols, data),
            Op::ConcatCols(parts.to_vec()),
        ))
    }

    pub fn gather_rows(&mut self, a: Var, idx: impl Into<Arc<[usize]>>) -> Result<Var> {
        let idx: Arc<[usize]> = idx.into();
        let value = self.value(a).select_rows(&idx)?;
        Ok(self.push(value, Op::GatherRows(a, idx)))
    }

    /// Scales every row to unit L2 norm. A zero row is a degenerate input.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        let mut norms = Vec::with_capacity(m.rows());
        let mut out = m.clone();
        for i in 0..m.rows() {
            let norm = m.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::DegenerateInput {
                    op: "normalize_rows",
                    detail: format!("row {i} has zero norm"),
                });
            }
            out.row_mut(i).iter_mut().for_each(|x| *x /= norm);
            norms.push(norm);
        }
        Ok(self.push(out, Op::NormalizeRows(a, norms)))
    }

    /// Cosine similarity of matched rows, as an `n×1` column.
    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let na = self.normalize_rows(a)?;
        let nb = self.normalize_rows(b)?;
        let prod = self.mul(na, nb)?;
        Ok(self.row_sum(prod))
    }

    /// All-pairs cosine similarity between rows of `a` and rows of `b`.
    pub fn cosine_matrix(&mut self, a: Var, b: Var) -> Result<Var> {
        let na = self.normalize_rows(a)?;
        let nb = self.normalize_rows(b)?;
        let nbt = self.transpose(nb);
        self.matmul(na, nbt)
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let data = (0..m.rows()).map(|i| m.row(i).iter().sum()).collect();
        self.push(DenseMatrix::column(data), Op::RowSum(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(DenseMatrix::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        if m.is_empty() {
            return Err(Error::DegenerateInput {
                op: "mean",
                detail: "empty matrix".into(),
            });
        }
        let s = m.sum() / m.len() as f64;
        Ok(self.push(DenseMatrix::scalar(s), Op::Mean(a)))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mut out = m.clone();
        for i in 0..m.rows() {
            let row = out.row_mut(i);
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|x| *x -= lse);
        }
        self.push(out, Op::LogSoftmaxRows(a))
    }

    /// Picks `a[r, idx[r]]` for every row, giving an `n×1` column.
    pub fn pick_cols(&mut self, a: Var, idx: impl Into<Arc<[usize]>>) -> Result<Var> {
        let idx: Arc<[usize]> = idx.into();
        let m = self.value(a);
        if idx.len() != m.rows() {
            return Err(Error::dim(
                "pick_cols",
                format!("{} indices for {} rows", idx.len(), m.rows()),
            ));
        }
        let mut data = Vec::with_capacity(idx.len());
        for (r, &c) in idx.iter().enumerate() {
            if c >= m.cols() {
                return Err(Error::Index {
                    op: "pick_cols",
                    index: c,
                    len: m.cols(),
                });
            }
            data.push(m.get(r, c));
        }
        Ok(self.push(DenseMatrix::column(data), Op::PickCols(a, idx)))
    }

    /// Sparse product with the adjacency's own weights held constant.
    pub fn spmm(&mut self, adj: &Arc<SparseAdjacency>, h: Var) -> Result<Var> {
        let w = self.constant(DenseMatrix::column(adj.weights().to_vec()));
        self.spmm_weighted(adj, w, h)
    }

    /// Sparse product using `weights` (`nnz×1`, one per stored entry) on the
    /// sparsity pattern of `adj`; differentiable in both weights and `h`.
    pub fn spmm_weighted(&mut self, adj: &Arc<SparseAdjacency>, weights: Var, h: Var) -> Result<Var> {
        if self.shape(weights) != (adj.nnz(), 1) {
            return Err(Error::dim(
                "spmm_weighted",
                format!("{:?} weights for {} entries", self.shape(weights), adj.nnz()),
            ));
        }
        let value = spmm_raw(adj, self.value(weights).data(), self.value(h))?;
        Ok(self.push(
            value,
            Op::SpMM {
                adj: Arc::clone(adj),
                weights,
                h,
            },
        ))
    }

    /// Expands per-edge weights (`m×1`) onto the entries of `adj` and applies
    /// symmetric degree normalization, returning `nnz×1` entry weights.
    pub fn sym_norm_edges(&mut self, adj: &Arc<SparseAdjacency>, edge_weights: Var) -> Result<Var> {
        if self.shape(edge_weights) != (adj.n_edges(), 1) {
            return Err(Error::dim(
                "sym_norm_edges",
                format!(
                    "{:?} weights for {} edges",
                    self.shape(edge_weights),
                    adj.n_edges()
                ),
            ));
        }
        let w = self.value(edge_weights).data();
        if let Some(&x) = w.iter().find(|&&x| x < 0.0 || !x.is_finite()) {
            return Err(Error::Domain {
                op: "sym_norm_edges",
                detail: format!("edge weight {x}"),
            });
        }
        let rows = adj.entry_rows();
        let mut deg = vec![0.0; adj.n()];
        for (k, &e) in adj.entry_edge().iter().enumerate() {
            deg[rows[k]] += w[e];
        }
        let inv_sqrt_deg: Vec<f64> = deg
            .iter()
            .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
            .collect();
        let out: Vec<f64> = adj
            .entry_edge()
            .iter()
            .enumerate()
            .map(|(k, &e)| w[e] * inv_sqrt_deg[rows[k]] * inv_sqrt_deg[adj.col_indices()[k]])
            .collect();
        Ok(self.push(
            DenseMatrix::column(out),
            Op::SymNormEdges {
                adj: Arc::clone(adj),
                edge_weights,
                inv_sqrt_deg,
            },
        ))
    }

    /// Reverse accumulation from a scalar `loss`. Gradients of parameter
    /// leaves are added into `store`; parameters not reachable from `loss`
    /// are left untouched.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<DenseMatrix>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(DenseMatrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            if let Op::Param(id) = node.op {
                store.get_mut(id).gradient.add_assign(&g);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &DenseMatrix, grads: &mut [Option<DenseMatrix>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).shape();
                let n = val(*b).cols();
                let mut da = vec![0.0; m * k];
                matmul_nt_into(g.data(), val(*b).data(), &mut da, m, n, k);
                accumulate(grads, *a, DenseMatrix::from_raw(m, k, da));
                let mut db = vec![0.0; k * n];
                matmul_tn_into(val(*a).data(), g.data(), &mut db, m, k, n);
                accumulate(grads, *b, DenseMatrix::from_raw(k, n, db));
            }
            Op::Transpose(a) => accumulate(grads, *a, g.transpose()),
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.scale(-1.0));
            }
            Op::AddRow(a, row) => {
                accumulate(grads, *a, g.clone());
                let mut dr = vec![0.0; g.cols()];
                for i in 0..g.rows() {
                    for (d, x) in dr.iter_mut().zip(g.row(i)) {
                        *d += x;
                    }
                }
                accumulate(grads, *row, DenseMatrix::from_raw(1, g.cols(), dr));
            }
            Op::Mul(a, b) => {
                let da = zip(g, val(*b), |x, y| x * y);
                let db = zip(g, val(*a), |x, y| x * y);
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::Affine(a, k) => accumulate(grads, *a, g.scale(*k)),
            Op::Sigmoid(a) => accumulate(grads, *a, zip(g, &node.value, |d, y| d * y * (1.0 - y))),
            Op::Tanh(a) => accumulate(grads, *a, zip(g, &node.value, |d, y| d * (1.0 - y * y))),
            Op::Log(a) => accumulate(grads, *a, zip(g, val(*a), |d, x| d / x)),
            Op::Exp(a) => accumulate(grads, *a, zip(g, &node.value, |d, y| d * y)),
            Op::ClampMin(a, lo) => {
                let lo = *lo;
                accumulate(grads, *a, zip(g, val(*a), |d, x| if x > lo { d } else { 0.0 }));
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (rows, cols) = val(p).shape();
                    let mut dp = Vec::with_capacity(rows * cols);
                    for i in 0..rows {
                        dp.extend_from_slice(&g.row(i)[offset..offset + cols]);
                    }
                    accumulate(grads, p, DenseMatrix::from_raw(rows, cols, dp));
                    offset += cols;
                }
            }
            Op::GatherRows(a, idx) => {
                let (rows, cols) = val(*a).shape();
                let mut da = DenseMatrix::zeros(rows, cols);
                for (r, &src) in idx.iter().enumerate() {
                    for (d, x) in da.row_mut(src).iter_mut().zip(g.row(r)) {
                        *d += x;
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::NormalizeRows(a, norms) => {
                let y = &node.value;
                let mut da = DenseMatrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let dot: f64 = y.row(i).iter().zip(g.row(i)).map(|(a, b)| a * b).sum();
                    for ((d, &yi), &gi) in da.row_mut(i).iter_mut().zip(y.row(i)).zip(g.row(i)) {
                        *d = (gi - yi * dot) / norms[i];
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::RowSum(a) => {
                let (rows, cols) = val(*a).shape();
                let mut da = DenseMatrix::zeros(rows, cols);
                for i in 0..rows {
                    let gi = g.get(i, 0);
                    da.row_mut(i).fill(gi);
                }
                accumulate(grads, *a, da);
            }
            Op::Sum(a) => {
                let (rows, cols) = val(*a).shape();
                accumulate(grads, *a, DenseMatrix::filled(rows, cols, g.data()[0]));
            }
            Op::Mean(a) => {
                let (rows, cols) = val(*a).shape();
                let k = g.data()[0] / (rows * cols) as f64;
                accumulate(grads, *a, DenseMatrix::filled(rows, cols, k));
            }
            Op::LogSoftmaxRows(a) => {
                let y = &node.value;
                let mut da = DenseMatrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let gs: f64 = g.row(i).iter().sum();
                    for ((d, &yi), &gi) in da.row_mut(i).iter_mut().zip(y.row(i)).zip(g.row(i)) {
                        *d = gi - yi.exp() * gs;
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::PickCols(a, idx) => {
                let (rows, cols) = val(*a).shape();
                let mut da = DenseMatrix::zeros(rows, cols);
                for (r, &c) in idx.iter().enumerate() {
                    da.set(r, c, g.get(r, 0));
                }
                accumulate(grads, *a, da);
            }
            Op::SpMM { adj, weights, h } => {
                let hv = val(*h);
                let w = val(*weights).data();
                let cols = hv.cols();
                let mut dh = DenseMatrix::zeros(hv.rows(), cols);
                let mut dw = vec![0.0; adj.nnz()];
                let offsets = adj.row_offsets();
                let col_idx = adj.col_indices();
                for i in 0..adj.n() {
                    let gi = g.row(i);
                    for k in offsets[i]..offsets[i + 1] {
                        let j = col_idx[k];
                        let hj = hv.row(j);
                        dw[k] = gi.iter().zip(hj).map(|(a, b)| a * b).sum();
                        let wk = w[k];
                        if wk != 0.0 {
                            for (d, &x) in dh.row_mut(j).iter_mut().zip(gi) {
                                *d += wk * x;
                            }
                        }
                    }
                }
                accumulate(grads, *h, dh);
                accumulate(grads, *weights, DenseMatrix::column(dw));
            }
            Op::SymNormEdges {
                adj,
                edge_weights,
                inv_sqrt_deg,
            } => {
                // out_k = w_e(k) r_row(k) r_col(k), r = deg^{-1/2}, deg_p = Σ_{row(k)=p} w_e(k)
                let out = node.value.data();
                let rows = adj.entry_rows();
                let cols = adj.col_indices();
                let gd = g.data();
                let mut d_deg = vec![0.0; adj.n()];
                for k in 0..adj.nnz() {
                    let t = gd[k] * out[k];
                    d_deg[rows[k]] += t;
                    d_deg[cols[k]] += t;
                }
                for (p, d) in d_deg.iter_mut().enumerate() {
                    *d *= -0.5 * inv_sqrt_deg[p] * inv_sqrt_deg[p];
                }
                let mut dw = vec![0.0; adj.n_edges()];
                for (k, &e) in adj.entry_edge().iter().enumerate() {
                    let (i, j) = (rows[k], cols[k]);
                    dw[e] += gd[k] * inv_sqrt_deg[i] * inv_sqrt_deg[j] + d_deg[i];
                }
                accumulate(grads, *edge_weights, DenseMatrix::column(dw));
            }
        }
    }
}

fn zip(a: &DenseMatrix, b: &DenseMatrix, f: impl Fn(f64, f64) -> f64) -> DenseMatrix {
    DenseMatrix::from_raw(
        a.rows(),
        a.cols(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

fn accumulate(grads: &mut [Option<DenseMatrix>], v: Var, g: DenseMatrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}
