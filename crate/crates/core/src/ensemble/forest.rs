//! Random forest of Gini-split classification trees on bootstrap samples.

use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ensemble::logistic::check_labels;
use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    /// Candidate features per split; `None` means `round(sqrt(d))`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 8,
            max_features: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf {
        p: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { p } => return p,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub n_features: usize,
    pub trees: Vec<Tree>,
}

fn gini(pos: f64, n: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    let p = pos / n;
    2.0 * p * (1.0 - p)
}

struct Builder<'a> {
    x: &'a DenseMatrix,
    y: &'a [u8],
    max_depth: usize,
    mtry: usize,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn leaf(&mut self, idx: &[usize]) -> usize {
        let pos = idx.iter().filter(|&&i| self.y[i] == 1).count();
        self.nodes.push(Node::Leaf {
            p: pos as f64 / idx.len() as f64,
        });
        self.nodes.len() - 1
    }

    /// Best `(feature, threshold, weighted child impurity)` among `mtry`
    /// random features, or `None` if every candidate is constant.
    fn best_split(&self, idx: &[usize], rng: &mut ChaCha8Rng) -> Option<(usize, f64, f64)> {
        let n = idx.len() as f64;
        let total_pos = idx.iter().filter(|&&i| self.y[i] == 1).count() as f64;
        let mut best: Option<(usize, f64, f64)> = None;
        let mut vals: Vec<(f64, u8)> = Vec::with_capacity(idx.len());
        for f in sample(rng, self.x.cols(), self.mtry) {
            vals.clear();
            vals.extend(idx.iter().map(|&i| (self.x.get(i, f), self.y[i])));
            vals.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_pos = 0.0;
            for k in 1..vals.len() {
                left_pos += f64::from(vals[k - 1].1);
                if vals[k].0 == vals[k - 1].0 {
                    continue;
                }
                let nl = k as f64;
                let nr = n - nl;
                let score = (nl * gini(left_pos, nl) + nr * gini(total_pos - left_pos, nr)) / n;
                if best.map_or(true, |(_, _, s)| score < s) {
                    let (lo, hi) = (vals[k - 1].0, vals[k].0);
                    let mid = lo + (hi - lo) / 2.0;
                    // Adjacent floats can round the midpoint up to `hi`.
                    let threshold = if mid < hi { mid } else { lo };
                    best = Some((f, threshold, score));
                }
            }
        }
        best
    }

    fn build(&mut self, idx: &[usize], depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let pos = idx.iter().filter(|&&i| self.y[i] == 1).count();
        if depth >= self.max_depth || idx.len() < 2 || pos == 0 || pos == idx.len() {
            return self.leaf(idx);
        }
        let Some((feature, threshold, _)) = self.best_split(idx, rng) else {
            return self.leaf(idx);
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x.get(i, feature) <= threshold);
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf { p: 0.0 });
        let left = self.build(&l, depth + 1, rng);
        let right = self.build(&r, depth + 1, rng);
        self.nodes[at] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        at
    }
}

pub fn fit_forest(x: &DenseMatrix, labels: &[u8], cfg: &ForestConfig) -> Result<RandomForest> {
    check_labels("fit_forest", x, labels)?;
    if x.rows() < 2 {
        return Err(Error::DegenerateFit(format!("forest needs at least 2 rows, got {}", x.rows())));
    }
    if cfg.n_trees == 0 {
        return Err(Error::Config("n_trees must be positive".into()));
    }
    let d = x.cols();
    let mtry = cfg
        .max_features
        .unwrap_or_else(|| (d as f64).sqrt().round() as usize)
        .clamp(1, d.max(1));
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let trees = (0..cfg.n_trees)
        .map(|_| {
            let mut rng = ChaCha8Rng::seed_from_u64(master.gen());
            let n = x.rows();
            let idx: Vec<usize> = if cfg.bootstrap {
                (0..n).map(|_| rng.gen_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let mut b = Builder {
                x,
                y: labels,
                max_depth: cfg.max_depth,
                mtry: if d == 0 { 0 } else { mtry },
                nodes: Vec::new(),
            };
            if d == 0 {
                b.leaf(&idx);
            } else {
                b.build(&idx, 0, &mut rng);
            }
            Tree { nodes: b.nodes }
        })
        .collect();
    Ok(RandomForest { n_features: d, trees })
}

impl RandomForest {
    /// Mean over trees of the class-1 frequency in the reached leaf.
    pub fn predict_proba(&self, x: &DenseMatrix) -> Result<Vec<f64>> {
        if x.cols() != self.n_features {
            return Err(Error::dim(
                "RandomForest::predict_proba",
                format!("{} columns for a forest over {}", x.cols(), self.n_features),
            ));
        }
        let k = self.trees.len() as f64;
        Ok((0..x.rows())
            .map(|r| self.trees.iter().map(|t| t.predict_row(x.row(r))).sum::<f64>() / k)
            .collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = bincode::serialize(self)?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(bincode::deserialize(&bytes)?)
    }
}
