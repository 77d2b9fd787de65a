//! Run configuration, read from TOML.
//!
//! ```toml
//! seeds = [0, 1, 2]
//! out_dir = "runs"
//!
//! [data]
//! test_fraction = 0.2
//! [data.synthetic]
//! n_accounts = 2000
//!
//! [train]
//! epochs = 50
//! [train.model]
//! hidden = 16
//!
//! [ensemble]
//! k_folds = 5
//!
//! [eval]
//! n_negatives = 50
//! ablations = ["hetero_graph", "hilo_learning", "label_division"]
//! ```
//!
//! Every section and field is optional. Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dual_gnn::BranchMode;
use crate::ensemble::EnsembleConfig;
use crate::error::{Error, Result};
use crate::graph::SyntheticConfig;
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub test_fraction: f64,
    /// Transaction CSV; with `associations`, replaces the synthetic graph.
    pub transactions: Option<PathBuf>,
    pub associations: Option<PathBuf>,
    pub synthetic: SyntheticConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            transactions: None,
            associations: None,
            synthetic: SyntheticConfig::default(),
        }
    }
}

/// Variants that need a fresh training run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Every label clean with weight 1.
    LabelDivision,
    /// Association edges only; no transaction edges.
    HeteroGraph,
    /// Two low-pass branches over the unsplit adjacency.
    HiloLearning,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::HeteroGraph, Ablation::HiloLearning, Ablation::LabelDivision];

    pub fn label(self) -> &'static str {
        match self {
            Ablation::LabelDivision => "w/o label division",
            Ablation::HeteroGraph => "w/o hetero graph",
            Ablation::HiloLearning => "w/o HiLo learning",
        }
    }

    pub fn apply(self, cfg: &TrainConfig) -> TrainConfig {
        let mut out = cfg.clone();
        match self {
            Ablation::LabelDivision => out.label_division = false,
            Ablation::HeteroGraph => {
                out.tx_edges_in_propagation = false;
                out.assoc_edges_in_propagation = true;
            }
            Ablation::HiloLearning => out.model.branch_mode = BranchMode::Gcn,
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_negatives: usize,
    pub ablations: Vec<Ablation>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_negatives: 50,
            ablations: Ablation::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub ensemble: EnsembleConfig,
    pub eval: EvalConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            out_dir: PathBuf::from("runs"),
            data: DataConfig::default(),
            train: TrainConfig::default(),
            ensemble: EnsembleConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if !(self.data.test_fraction > 0.0 && self.data.test_fraction < 1.0) {
            return Err(Error::Config("test_fraction must be in (0, 1)".into()));
        }
        if self.data.transactions.is_some() != self.data.associations.is_some() {
            return Err(Error::Config("transactions and associations must be given together".into()));
        }
        if self.eval.n_negatives == 0 {
            return Err(Error::Config("n_negatives must be positive".into()));
        }
        self.data.synthetic.validate()?;
        self.train.validate()?;
        self.ensemble.validate()
    }

    /// First 16 hex digits of the SHA-256 of every setting that affects
    /// results (seeds and output directory excluded).
    pub fn hash(&self) -> String {
        let key = serde_json::json!({
            "data": self.data,
            "train": self.train,
            "ensemble": self.ensemble,
            "eval": self.eval,
        });
        let digest = Sha256::digest(key.to_string().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Copy with the seed written into every seeded section.
    pub fn for_seed(&self, seed: u64) -> Self {
        let mut cfg = self.clone();
        cfg.seeds = vec![seed];
        cfg.data.synthetic.seed = seed;
        cfg.ensemble.seed = seed;
        cfg
    }
}
