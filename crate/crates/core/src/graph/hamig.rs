use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::features::{standardize, AccountFeatures};
use crate::numerics::DenseMatrix;

/// Labeled account↔account association, stored with `a < b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AssocEdge {
    pub a: usize,
    pub b: usize,
    pub label: u8,
}

impl AssocEdge {
    pub fn new(a: usize, b: usize, label: u8) -> Result<Self> {
        if a == b {
            return Err(Error::Validation(format!("self-association on account {a}")));
        }
        if label > 1 {
            return Err(Error::Validation(format!("label {label} is not 0 or 1")));
        }
        Ok(Self {
            a: a.min(b),
            b: a.max(b),
            label,
        })
    }

    pub fn pair(&self) -> (usize, usize) {
        (self.a, self.b)
    }
}

/// Heterogeneous attributed mixing interaction graph.
///
/// Accounts occupy node ids `0..n_accounts`; contract `k` is node
/// `n_accounts + k`. Transaction edges are stored as `(account, contract)`
/// with the contract given by its local index.
#[derive(Clone, Debug, PartialEq)]
pub struct Hamig {
    pub accounts: Vec<String>,
    pub contracts: Vec<String>,
    pub tx_edges: Vec<(usize, usize)>,
    pub assoc_edges: Vec<AssocEdge>,
    pub features: AccountFeatures,
}

impl Hamig {
    pub fn new(
        accounts: Vec<String>,
        contracts: Vec<String>,
        tx_edges: Vec<(usize, usize)>,
        assoc_edges: Vec<AssocEdge>,
        features: AccountFeatures,
    ) -> Result<Self> {
        let g = Self {
            accounts,
            contracts,
            tx_edges,
            assoc_edges,
            features,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn n_accounts(&self) -> usize {
        self.accounts.len()
    }

    pub fn n_contracts(&self) -> usize {
        self.contracts.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.accounts.len() + self.contracts.len()
    }

    pub fn contract_node(&self, k: usize) -> usize {
        self.accounts.len() + k
    }

    pub fn is_account(&self, node: usize) -> bool {
        node < self.accounts.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.raw.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let n_a = self.n_accounts();
        let n_t = self.n_contracts();
        if self.features.raw.rows() != n_a {
            return Err(Error::Validation(format!(
                "{} feature rows for {n_a} accounts",
                self.features.raw.rows()
            )));
        }
        let mut seen = HashSet::new();
        for &(a, c) in &self.tx_edges {
            if a >= n_a || c >= n_t {
                return Err(Error::Validation(format!(
                    "transaction edge ({a}, {c}) out of range"
                )));
            }
            if !seen.insert((a, c)) {
                return Err(Error::Validation(format!(
                    "duplicate transaction edge ({a}, {c})"
                )));
            }
        }
        let mut seen = HashSet::new();
        for e in &self.assoc_edges {
            if e.a >= e.b || e.b >= n_a {
                return Err(Error::Validation(format!(
                    "association ({}, {}) is not a canonical account pair",
                    e.a, e.b
                )));
            }
            if !seen.insert((e.a, e.b)) {
                return Err(Error::Validation(format!(
                    "duplicate association ({}, {})",
                    e.a, e.b
                )));
            }
        }
        Ok(())
    }

    /// Association edges with observed label 1.
    pub fn positive_assoc(&self) -> impl Iterator<Item = &AssocEdge> {
        self.assoc_edges.iter().filter(|e| e.label == 1)
    }

    /// Transaction edges in global node ids.
    pub fn tx_node_edges(&self) -> Vec<(usize, usize)> {
        self.tx_edges
            .iter()
            .map(|&(a, c)| (a, self.contract_node(c)))
            .collect()
    }

    /// Set of every labeled pair, regardless of label.
    pub fn labeled_pairs(&self) -> HashSet<(usize, usize)> {
        self.assoc_edges.iter().map(AssocEdge::pair).collect()
    }

    /// Node feature matrix over all nodes: standardized account features,
    /// then one one-hot row per contract, zero-padded to the same width.
    pub fn node_features(&self) -> DenseMatrix {
        let d = self.feature_dim();
        let std = standardize(&self.features.raw);
        let mut data = std.into_vec();
        for k in 0..self.n_contracts() {
            let mut row = vec![0.0; d];
            if d > 0 {
                row[k % d] = 1.0;
            }
            data.extend(row);
        }
        DenseMatrix::from_raw(self.n_nodes(), d, data)
    }
}
