//! Shared encoder, parameter-free low/high-pass propagation and one link
//! head per branch.
//!
//! ```text
//! H0    = tanh(X W1 + b1) W2 + b2
//! H_LF <- (I + Ã_LF) H_LF          (depth times, from H0)
//! H_HF <- (I - α Ã_HF) H_HF        (depth times, from H0)
//! p_ij  = softmax(Linear(pair(h_i, h_j)))
//! ```

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::freq_decomp::{view_weights, xavier, PropagationGraph, SmoothnessScorer};
use crate::graph::{read_json, write_json};
use crate::numerics::{DenseMatrix, ParamId, ParamStore, SparseAdjacency, Tape, Var};

/// How a pair of node embeddings is turned into link-head input.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    /// `[h_i ‖ h_j]`.
    Concat,
    /// `[h_i ‖ h_j ‖ h_i ⊙ h_j ‖ (h_i − h_j)²]`.
    #[default]
    Interaction,
}

impl PairMode {
    pub fn width(self, embed: usize) -> usize {
        match self {
            PairMode::Concat => 2 * embed,
            PairMode::Interaction => 4 * embed,
        }
    }
}

/// Propagation scheme of the two branches.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchMode {
    /// Low-pass over the smooth view, high-pass over the rough view.
    #[default]
    HiLo,
    /// Both branches low-pass over the unsplit normalized adjacency.
    Gcn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Low,
    High,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    pub embed: usize,
    pub depth: usize,
    pub alpha: f64,
    pub pair_mode: PairMode,
    pub branch_mode: BranchMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            embed: 16,
            depth: 2,
            alpha: 0.5,
            pair_mode: PairMode::Interaction,
            branch_mode: BranchMode::HiLo,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.embed == 0 {
            return Err(Error::Config("hidden and embed widths must be positive".into()));
        }
        if self.depth == 0 {
            return Err(Error::Config("depth must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Encoder {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl Encoder {
    pub fn new(store: &mut ParamStore, in_dim: usize, hidden: usize, embed: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w1: store.add("encoder.w1", xavier(in_dim, hidden, rng)),
            b1: store.add("encoder.b1", DenseMatrix::zeros(1, hidden)),
            w2: store.add("encoder.w2", xavier(hidden, embed, rng)),
            b2: store.add("encoder.b2", DenseMatrix::zeros(1, embed)),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w1 = tape.param(store, self.w1);
        let b1 = tape.param(store, self.b1);
        let w2 = tape.param(store, self.w2);
        let b2 = tape.param(store, self.b2);
        let z = tape.matmul(x, w1)?;
        let z = tape.add_row(z, b1)?;
        let a = tape.tanh(z);
        let h = tape.matmul(a, w2)?;
        tape.add_row(h, b2)
    }
}

/// `encode(x)` off-tape.
pub fn encode(enc: &Encoder, store: &ParamStore, x: &DenseMatrix) -> Result<DenseMatrix> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let h = enc.forward(&mut tape, store, xv)?;
    Ok(tape.value(h).clone())
}

/// `depth` applications of `H <- H + k · A H`, where the entry weights of `A`
/// are the tape variable `weights`.
pub fn propagate_on_tape(
    tape: &mut Tape,
    adj: &Arc<SparseAdjacency>,
    weights: Var,
    h0: Var,
    depth: usize,
    k: f64,
) -> Result<Var> {
    let mut h = h0;
    for _ in 0..depth {
        let ah = tape.spmm_weighted(adj, weights, h)?;
        let ah = tape.scale(ah, k);
        h = tape.add(h, ah)?;
    }
    Ok(h)
}

/// `(I + Ã_LF)^depth H0`.
pub fn propagate_low(h0: &DenseMatrix, a_lf: &SparseAdjacency, depth: usize) -> Result<DenseMatrix> {
    propagate(h0, a_lf, depth, 1.0)
}

/// `(I − α Ã_HF)^depth H0`.
pub fn propagate_high(h0: &DenseMatrix, a_hf: &SparseAdjacency, depth: usize, alpha: f64) -> Result<DenseMatrix> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain {
            op: "propagate_high",
            detail: format!("alpha {alpha} outside [0, 1]"),
        });
    }
    propagate(h0, a_hf, depth, -alpha)
}

fn propagate(h0: &DenseMatrix, a: &SparseAdjacency, depth: usize, k: f64) -> Result<DenseMatrix> {
    let mut h = h0.clone();
    for _ in 0..depth {
        let ah = a.spmm(&h)?;
        h = h.zip_map(&ah, |x, y| x + k * y)?;
    }
    Ok(h)
}

/// Affine map from a pair representation to two logits `(no-edge, edge)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkHead {
    pub weight: ParamId,
    pub bias: ParamId,
    pub mode: PairMode,
}

impl LinkHead {
    pub fn new(store: &mut ParamStore, name: &str, embed: usize, mode: PairMode, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: store.add(format!("{name}.weight"), xavier(mode.width(embed), 2, rng)),
            bias: store.add(format!("{name}.bias"), DenseMatrix::zeros(1, 2)),
            mode,
        }
    }

    /// Row-wise log-probabilities for canonicalized pairs, `m×2`.
    pub fn log_probs(&self, tape: &mut Tape, store: &ParamStore, h: Var, pairs: &[(usize, usize)]) -> Result<Var> {
        let x = pair_input(tape, h, pairs, self.mode)?;
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let z = tape.matmul(x, w)?;
        let z = tape.add_row(z, b)?;
        Ok(tape.log_softmax_rows(z))
    }
}

fn canonical(pairs: &[(usize, usize)]) -> (Vec<usize>, Vec<usize>) {
    pairs.iter().map(|&(i, j)| (i.min(j), i.max(j))).unzip()
}

/// Pair representation on the tape, with each pair put in `i < j` order.
pub fn pair_input(tape: &mut Tape, h: Var, pairs: &[(usize, usize)], mode: PairMode) -> Result<Var> {
    let (a, b) = canonical(pairs);
    let hi = tape.gather_rows(h, a)?;
    let hj = tape.gather_rows(h, b)?;
    match mode {
        PairMode::Concat => tape.concat_cols(&[hi, hj]),
        PairMode::Interaction => {
            let prod = tape.mul(hi, hj)?;
            let diff = tape.sub(hi, hj)?;
            let sq = tape.mul(diff, diff)?;
            tape.concat_cols(&[hi, hj, prod, sq])
        }

    }
}

/// Pair representation off-tape.
pub fn pair_representation(h: &DenseMatrix, pairs: &[(usize, usize)], mode: PairMode) -> Result<DenseMatrix> {
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    let x = pair_input(&mut tape, hv, pairs, mode)?;
    Ok(tape.value(x).clone())
}

/// Tape variables of one full forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub h0: Var,
    pub smoothness: Option<Var>,
    pub h_lf: Var,
    pub h_hf: Var,
}

/// Final embeddings of both branches.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchEmbeddings {
    pub h0: DenseMatrix,
    pub h_lf: DenseMatrix,
    pub h_hf: DenseMatrix,
    pub smoothness: Vec<f64>,
}

impl BranchEmbeddings {
    pub fn branch(&self, b: Branch) -> &DenseMatrix {
        match b {
            Branch::Low => &self.h_lf,
            Branch::High => &self.h_hf,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HiLoModel {
    pub config: ModelConfig,
    pub in_dim: usize,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub scorer: SmoothnessScorer,
    pub head_lf: LinkHead,
    pub head_hf: LinkHead,
}

impl HiLoModel {
    pub fn new(config: ModelConfig, in_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, in_dim, config.hidden, config.embed, &mut rng);
        let scorer = SmoothnessScorer::new(&mut store, config.embed, &mut rng);
        let head_lf = LinkHead::new(&mut store, "head_lf", config.embed, config.pair_mode, &mut rng);
        let head_hf = LinkHead::new(&mut store, "head_hf", config.embed, config.pair_mode, &mut rng);
        Ok(Self {
            config,
            in_dim,
            store,
            encoder,
            scorer,
            head_lf,
            head_hf,
        })
    }

    pub fn head(&self, b: Branch) -> &LinkHead {
        match b {
            Branch::Low => &self.head_lf,
            Branch::High => &self.head_hf,
        }
    }

    /// Sets both heads to zero so every pair scores `(0.5, 0.5)`.
    pub fn zero_heads(&mut self) -> Result<()> {
        for head in [self.head_lf, self.head_hf] {
            let (r, c) = self.store.value(head.weight).shape();
            self.store.set_value(head.weight, DenseMatrix::zeros(r, c))?;
            self.store.set_value(head.bias, DenseMatrix::zeros(1, 2))?;
        }
        Ok(())
    }

    /// Encoder, smoothness, view split and both propagations on one tape.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, graph: &PropagationGraph) -> Result<ForwardVars> {
        let (n, _) = tape.shape(x);
        if n != graph.n_nodes() {
            return Err(Error::dim(
                "forward",
                format!("{n} feature rows for {} graph nodes", graph.n_nodes()),
            ));
        }
        let h0 = self.encoder.forward(tape, store, x)?;
        let depth = self.config.depth;
        match self.config.branch_mode {
            BranchMode::HiLo => {
                let s = self
                    .scorer
                    .score(tape, store, h0, &graph.sources(), &graph.targets())?;
                let (w_lf, w_hf) = view_weights(tape, &graph.adj, s)?;
                let h_lf = propagate_on_tape(tape, &graph.adj, w_lf, h0, depth, 1.0)?;
                let h_hf = propagate_on_tape(tape, &graph.adj, w_hf, h0, depth, -self.config.alpha)?;
                Ok(ForwardVars {
                    h0,
                    smoothness: Some(s),
                    h_lf,
                    h_hf,
                })
            }
            BranchMode::Gcn => {
                let norm = graph.adj.sym_normalized();
                let w = tape.constant(DenseMatrix::column(norm.weights().to_vec()));
                let h = propagate_on_tape(tape, &graph.adj, w, h0, depth, 1.0)?;
                Ok(ForwardVars {
                    h0,
                    smoothness: None,
                    h_lf: h,
                    h_hf: h,
                })
            }
        }
    }

    pub fn embed(&self, x: &DenseMatrix, graph: &PropagationGraph) -> Result<BranchEmbeddings> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let f = self.forward(&mut tape, &self.store, xv, graph)?;
        Ok(BranchEmbeddings {
            h0: tape.value(f.h0).clone(),
            h_lf: tape.value(f.h_lf).clone(),
            h_hf: tape.value(f.h_hf).clone(),
            smoothness: f
                .smoothness
                .map(|s| tape.value(s).data().to_vec())
                .unwrap_or_default(),
        })
    }

    /// Class probabilities `(p_no_edge, p_edge)` of one branch for each pair.
    pub fn predict_pairs(&self, emb: &BranchEmbeddings, branch: Branch, pairs: &[(usize, usize)]) -> Result<DenseMatrix> {
        let mut tape = Tape::new();
        let h = tape.constant(emb.branch(branch).clone());
        let lp = self.head(branch).log_probs(&mut tape, &self.store, h, pairs)?;
        Ok(tape.value(lp).map(f64::exp))
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut bytes = Vec::new();
        let mut entries = Vec::new();
        for p in self.store.iter() {
            entries.push(TensorEntry {
                name: p.name.clone(),
                rows: p.value.rows(),
                cols: p.value.cols(),
                offset: bytes.len() / 8,
            });
            bytes.extend(p.value.data().iter().flat_map(|v| v.to_le_bytes()));
        }
        let path = dir.join("params.bin");
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        write_json(
            &dir.join("manifest.json"),
            &CheckpointManifest {
                config: self.config.clone(),
                in_dim: self.in_dim,
                dtype: "f64-le".into(),
                tensors: entries,
            },
        )
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: CheckpointManifest = read_json(&dir.join("manifest.json"))?;
        let path = dir.join("params.bin");
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let mut model = Self::new(manifest.config, manifest.in_dim, 0)?;
        if manifest.tensors.len() != model.store.len() {
            return Err(Error::Validation(format!(
                "checkpoint has {} tensors, model expects {}",
                manifest.tensors.len(),
                model.store.len()
            )));
        }
        for t in &manifest.tensors {
            let id = model
                .store
                .find(&t.name)
                .ok_or_else(|| Error::Validation(format!("unknown tensor `{}`", t.name)))?;
            let end = t.offset + t.rows * t.cols;
            if end > values.len() {
                return Err(Error::Validation(format!("tensor `{}` runs past params.bin", t.name)));
            }
            let value = DenseMatrix::from_vec(t.rows, t.cols, values[t.offset..end].to_vec())?;
            model.store.set_value(id, value)?;
        }
        Ok(model)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    config: ModelConfig,
    in_dim: usize,
    dtype: String,
    tensors: Vec<TensorEntry>,
}

/// Probability pair for one account pair. Contract nodes and self-pairs are
/// rejected; `(i, j)` and `(j, i)` give the same result.
pub fn predict_link(
    model: &HiLoModel,
    emb: &BranchEmbeddings,
    branch: Branch,
    i: usize,
    j: usize,
    n_accounts: usize,
) -> Result<[f64; 2]> {
    if i == j {
        return Err(Error::Domain {
            op: "predict_link",
            detail: format!("self-pair ({i}, {j})"),
        });
    }
    if i >= n_accounts || j >= n_accounts {
        return Err(Error::Domain {
            op: "predict_link",
            detail: format!("({i}, {j}) includes a contract node"),
        });
    }
    let p = model.predict_pairs(emb, branch, &[(i, j)])?;
    Ok([p.get(0, 0), p.get(0, 1)])
}
