use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

/// Compressed-sparse-row adjacency.
///
/// Matrices built from an undirected edge list keep a mapping from each stored
/// entry back to its edge, so per-edge weights (smoothness scores) can be
/// expanded into both `(i, j)` and `(j, i)` entries.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseAdjacency {
    n: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    weights: Vec<f64>,
    symmetric: bool,
    entry_edge: Vec<usize>,
    n_edges: usize,
}

impl SparseAdjacency {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            row_offsets: vec![0; n + 1],
            col_indices: Vec::new(),
            weights: Vec::new(),
            symmetric: true,
            entry_edge: Vec::new(),
            n_edges: 0,
        }
    }

    /// Symmetric adjacency from undirected edges with one weight per edge.
    ///
    /// A self-loop `(i, i)` produces a single diagonal entry. Duplicate
    /// undirected edges are rejected.
    pub fn from_undirected(n: usize, edges: &[(usize, usize)], weights: &[f64]) -> Result<Self> {
        if edges.len() != weights.len() {
            return Err(Error::Contract(format!(
                "{} edges but {} weights",
                edges.len(),
                weights.len()
            )));
        }
        let mut entries: Vec<(usize, usize, usize)> = Vec::with_capacity(edges.len() * 2);
        for (e, &(u, v)) in edges.iter().enumerate() {
            for idx in [u, v] {
                if idx >= n {
                    return Err(Error::Index {
                        op: "from_undirected",
                        index: idx,
                        len: n,
                    });
                }
            }
            check_weight(weights[e])?;
            entries.push((u, v, e));
            if u != v {
                entries.push((v, u, e));
            }
        }
        entries.sort_unstable();
        if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0 && w[0].1 == w[1].1) {
            return Err(Error::Validation(format!(
                "duplicate edge ({}, {})",
                w[0].0, w[0].1
            )));
        }
        let mut row_offsets = vec![0; n + 1];
        for &(r, _, _) in &entries {
            row_offsets[r + 1] += 1;
        }
        for i in 0..n {
            row_offsets[i + 1] += row_offsets[i];
        }
        Ok(Self {
            n,
            row_offsets,
            col_indices: entries.iter().map(|e| e.1).collect(),
            weights: entries.iter().map(|e| weights[e.2]).collect(),
            symmetric: true,
            entry_edge: entries.iter().map(|e| e.2).collect(),
            n_edges: edges.len(),
        })
    }

    /// General (possibly asymmetric) matrix from `(row, col, weight)` triplets.
    /// Each stored entry is its own "edge".
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut t: Vec<(usize, usize, f64)> = triplets.to_vec();
        for &(i, j, w) in &t {
            if i >= n || j >= n {
                return Err(Error::Index {
                    op: "from_triplets",
                    index: i.max(j),
                    len: n,
                });
            }
            check_weight(w)?;
        }
        t.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        if t.windows(2).any(|w| w[0].0 == w[1].0 && w[0].1 == w[1].1) {
            return Err(Error::Validation("duplicate triplet".into()));
        }
        let mut row_offsets = vec![0; n + 1];
        for &(r, _, _) in &t {
            row_offsets[r + 1] += 1;
        }
        for i in 0..n {
            row_offsets[i + 1] += row_offsets[i];
        }
        let mut adj = Self {
            n,
            row_offsets,
            col_indices: t.iter().map(|e| e.1).collect(),
            weights: t.iter().map(|e| e.2).collect(),
            symmetric: false,
            entry_edge: (0..t.len()).collect(),
            n_edges: t.len(),
        };
        adj.symmetric = adj.check_symmetric();
        Ok(adj)
    }

    pub fn from_dense(m: &DenseMatrix) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(Error::dim("from_dense", "adjacency must be square"));
        }
        let mut t = Vec::new();
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                let w = m.get(i, j);
                if w != 0.0 {
                    t.push((i, j, w));
                }
            }
        }
        Self::from_triplets(m.rows(), &t)
    }

    fn check_symmetric(&self) -> bool {
        (0..self.n).all(|i| {
            self.row(i)
                .all(|(j, w)| self.weight_at(j, i).is_some_and(|wt| wt == w))
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    #[inline]
    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    #[inline]
    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Edge index owning each stored entry.
    pub fn entry_edge(&self) -> &[usize] {
        &self.entry_edge
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_offsets[i]..self.row_offsets[i + 1];
        self.col_indices[span.clone()]
            .iter()
            .copied()
            .zip(self.weights[span].iter().copied())
    }

    pub fn weight_at(&self, i: usize, j: usize) -> Option<f64> {
        let span = self.row_offsets[i]..self.row_offsets[i + 1];
        self.col_indices[span.clone()]
            .binary_search(&j)
            .ok()
            .map(|k| self.weights[span.start + k])
    }

    /// Row index of every stored entry.
    pub fn entry_rows(&self) -> Vec<usize> {
        let mut rows = Vec::with_capacity(self.nnz());
        for i in 0..self.n {
            rows.extend(std::iter::repeat(i).take(self.row_offsets[i + 1] - self.row_offsets[i]));
        }
        rows
    }

    /// Weighted degree of every node.
    pub fn degrees(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(_, w)| w).sum()).collect()
    }

    /// Same sparsity pattern with one new weight per edge.
    pub fn with_edge_weights(&self, edge_weights: &[f64]) -> Result<Self> {
        if edge_weights.len() != self.n_edges {
            return Err(Error::Contract(format!(
                "{} edge weights for {} edges",
                edge_weights.len(),
                self.n_edges
            )));
        }
        for &w in edge_weights {
            check_weight(w)?;
        }
        let mut out = self.clone();
        for (w, &e) in out.weights.iter_mut().zip(&self.entry_edge) {
            *w = edge_weights[e];
        }
        Ok(out)
    }

    /// Same sparsity pattern with one new weight per stored entry.
    pub(crate) fn with_entry_weights(&self, weights: Vec<f64>) -> Self {
        debug_assert_eq!(weights.len(), self.nnz());
        Self {
            weights,
            ..self.clone()
        }
    }

    /// `D^{-1/2} A D^{-1/2}` with weighted degrees; zero-degree rows stay zero.
    pub fn sym_normalized(&self) -> Self {
        let inv_sqrt: Vec<f64> = self
            .degrees()
            .into_iter()
            .map(|d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
            .collect();
        let rows = self.entry_rows();
        let weights = self
            .weights
            .iter()
            .zip(rows.iter().zip(&self.col_indices))
            .map(|(&w, (&i, &j))| w * inv_sqrt[i] * inv_sqrt[j])
            .collect();
        self.with_entry_weights(weights)
    }

    /// `out[i] = Σ_j w_ij · h[j]`.
    pub fn spmm(&self, h: &DenseMatrix) -> Result<DenseMatrix> {
        spmm_raw(self, &self.weights, h)
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, w) in self.row(i) {
                m.set(i, j, w);
            }
        }
        m
    }
}

fn check_weight(w: f64) -> Result<()> {
    if !w.is_finite() || w < 0.0 {
        return Err(Error::Domain {
            op: "adjacency",
            detail: format!("edge weight {w} must be finite and non-negative"),
        });
    }
    Ok(())
}

pub(crate) fn spmm_raw(adj: &SparseAdjacency, weights: &[f64], h: &DenseMatrix) -> Result<DenseMatrix> {
    if adj.n != h.rows() {
        return Err(Error::dim(
            "spmm",
            format!("adjacency over {} nodes, features have {} rows", adj.n, h.rows()),
        ));
    }
    let c = h.cols();
    let mut out = DenseMatrix::zeros(adj.n, c);
    for i in 0..adj.n {
        let span = adj.row_offsets[i]..adj.row_offsets[i + 1];
        let out_row = out.row_mut(i);
        for k in span {
            let w = weights[k];
            if w == 0.0 {
                continue;
            }
            for (o, &x) in out_row.iter_mut().zip(h.row(adj.col_indices[k])) {
                *o += w * x;
            }
        }
    }
    Ok(out)
}
