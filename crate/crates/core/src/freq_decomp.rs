//! Learnable edge smoothness and the low/high-frequency split of the graph.
//!
//! The scorer applies one affine map to both concatenation orders of an
//! edge's endpoint embeddings and sums them before the sigmoid, so
//! `s(i, j)` and `s(j, i)` are the same floating-point value. A smooth edge
//! (`s` near 1) carries its weight into the low-frequency view, the rest
//! (`1 - s`) goes to the high-frequency view.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Hamig;
use crate::numerics::{DenseMatrix, ParamId, ParamStore, SparseAdjacency, Tape, Var};

/// Undirected edge list over all graph nodes together with its adjacency.
/// Edge `e` of `edges` owns the stored entries whose `entry_edge` is `e`.
#[derive(Clone, Debug)]
pub struct PropagationGraph {
    pub edges: Vec<(usize, usize)>,
    pub adj: Arc<SparseAdjacency>,
}

impl PropagationGraph {
    pub fn new(n_nodes: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        let ones = vec![1.0; edges.len()];
        let adj = SparseAdjacency::from_undirected(n_nodes, &edges, &ones)?;
        Ok(Self {
            edges,
            adj: Arc::new(adj),
        })
    }

    /// Transaction edges, optionally followed by the given account pairs.
    pub fn from_hamig(g: &Hamig, include_tx: bool, assoc: &[(usize, usize)]) -> Result<Self> {
        let mut edges = if include_tx { g.tx_node_edges() } else { Vec::new() };
        edges.extend_from_slice(assoc);
        Self::new(g.n_nodes(), edges)
    }

    pub fn n_nodes(&self) -> usize {
        self.adj.n()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn sources(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.0).collect()
    }

    pub fn targets(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.1).collect()
    }
}

/// One affine map `R^{2h} -> R` shared by both concatenation orders.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmoothnessScorer {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl SmoothnessScorer {
    pub fn new(store: &mut ParamStore, embed_dim: usize, rng: &mut impl Rng) -> Self {
        let weight = store.add("scorer.weight", xavier(2 * embed_dim, 1, rng));
        let bias = store.add("scorer.bias", DenseMatrix::zeros(1, 1));
        Self { weight, bias }
    }

    /// Pre-activation `Linear(h_i‖h_j) + Linear(h_j‖h_i)` per edge, `m×1`.
    pub fn logits(&self, tape: &mut Tape, store: &ParamStore, h0: Var, src: &[usize], dst: &[usize]) -> Result<Var> {
        if src.len() != dst.len() {
            return Err(Error::Contract(format!(
                "{} sources but {} targets",
                src.len(),
                dst.len()
            )));
        }
        let hi = tape.gather_rows(h0, src.to_vec())?;
        let hj = tape.gather_rows(h0, dst.to_vec())?;
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let fwd = tape.concat_cols(&[hi, hj])?;
        let rev = tape.concat_cols(&[hj, hi])?;
        let zf = tape.matmul(fwd, w)?;
        let zf = tape.add_row(zf, b)?;
        let zr = tape.matmul(rev, w)?;
        let zr = tape.add_row(zr, b)?;
        tape.add(zf, zr)
    }

    /// Smoothness `s_ij` per edge on the tape, `m×1`.
    pub fn score(&self, tape: &mut Tape, store: &ParamStore, h0: Var, src: &[usize], dst: &[usize]) -> Result<Var> {
        let z = self.logits(tape, store, h0, src, dst)?;
        Ok(tape.sigmoid(z))
    }
}

/// Smoothness of every listed edge, evaluated off-tape.
pub fn score_edges(
    scorer: &SmoothnessScorer,
    store: &ParamStore,
    h0: &DenseMatrix,
    edges: &[(usize, usize)],
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let h = tape.constant(h0.clone());
    let src: Vec<usize> = edges.iter().map(|e| e.0).collect();
    let dst: Vec<usize> = edges.iter().map(|e| e.1).collect();
    let s = scorer.score(&mut tape, store, h, &src, &dst)?;
    Ok(tape.value(s).data().to_vec())
}

/// Unnormalized and normalized low/high-frequency views of one adjacency.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyViews {
    pub low: SparseAdjacency,
    pub high: SparseAdjacency,
    pub low_norm: SparseAdjacency,
    pub high_norm: SparseAdjacency,
}

/// `A_LF = s` and `A_HF = 1 - s` on the support of `a`; zero elsewhere.
/// `a` is expected to carry unit weights on its edges.
pub fn split_views(a: &SparseAdjacency, s: &[f64]) -> Result<FrequencyViews> {
    if s.len() != a.n_edges() {
        return Err(Error::Contract(format!(
            "{} smoothness scores for {} edges",
            s.len(),
            a.n_edges()
        )));
    }
    if let Some(&x) = s.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::Domain {
            op: "split_views",
            detail: format!("smoothness {x} outside [0, 1]"),
        });
    }
    let edge_w = edge_weights_of(a);
    let low_w: Vec<f64> = s.iter().zip(&edge_w).map(|(s, w)| w * s).collect();
    let high_w: Vec<f64> = s.iter().zip(&edge_w).map(|(s, w)| w * (1.0 - s)).collect();
    let low = a.with_edge_weights(&low_w)?;
    let high = a.with_edge_weights(&high_w)?;
    Ok(FrequencyViews {
        low_norm: normalize_view(&low),
        high_norm: normalize_view(&high),
        low,
        high,
    })
}

fn edge_weights_of(a: &SparseAdjacency) -> Vec<f64> {
    let mut w = vec![0.0; a.n_edges()];
    for (&e, &x) in a.entry_edge().iter().zip(a.weights()) {
        w[e] = x;
    }
    w
}

/// `D^{-1/2} A D^{-1/2}` with weighted degrees; isolated nodes give zero rows.
pub fn normalize_view(a: &SparseAdjacency) -> SparseAdjacency {
    a.sym_normalized()
}

/// Normalized entry weights of both views as tape variables (`nnz×1` each),
/// so the propagation stays differentiable in the smoothness scores.
pub fn view_weights(tape: &mut Tape, adj: &Arc<SparseAdjacency>, s: Var) -> Result<(Var, Var)> {
    let low = tape.sym_norm_edges(adj, s)?;
    let one_minus = tape.affine(s, -1.0, 1.0);
    let high = tape.sym_norm_edges(adj, one_minus)?;
    Ok((low, high))
}

/// Writes `edge_id,i,j,s` rows.
pub fn write_smoothness_csv(path: impl AsRef<Path>, edges: &[(usize, usize)], s: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["edge_id", "i", "j", "s"])?;
    for (e, (&(i, j), v)) in edges.iter().zip(s).enumerate() {
        w.write_record([e.to_string(), i.to_string(), j.to_string(), v.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Glorot-uniform initialisation.
pub(crate) fn xavier(rows: usize, cols: usize, rng: &mut impl Rng) -> DenseMatrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    DenseMatrix::from_vec(rows, cols, data).expect("finite init")
}
