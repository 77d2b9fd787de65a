//! Ranking tasks: each positive pair against negatives that corrupt its
//! second endpoint.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::metrics::RankingInstance;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingTask {
    pub positive: (usize, usize),
    pub negatives: Vec<(usize, usize)>,
}

impl RankingTask {
    /// The positive followed by its negatives.
    pub fn candidates(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        std::iter::once(self.positive).chain(self.negatives.iter().copied())
    }
}

/// For every positive `(a, b)`, draws `n_negatives` distinct pairs `(a, c)`
/// with `c` a uniformly drawn account, `c != a`, and `(a, c)` not in
/// `excluded`. Pairs are stored canonically (`min, max`).
pub fn build_ranking_tasks(
    positives: &[(usize, usize)],
    n_accounts: usize,
    excluded: &HashSet<(usize, usize)>,
    n_negatives: usize,
    seed: u64,
) -> Result<Vec<RankingTask>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tasks = Vec::with_capacity(positives.len());
    for &(a, b) in positives {
        if a >= n_accounts || b >= n_accounts {
            return Err(Error::Index {
                op: "build_ranking_tasks",
                index: a.max(b),
                len: n_accounts,
            });
        }
        let free = (0..n_accounts)
            .filter(|&c| c != a && !excluded.contains(&(a.min(c), a.max(c))))
            .count();
        if free < n_negatives {
            return Err(Error::Config(format!(
                "account {a} has {free} candidate negatives, {n_negatives} requested"
            )));
        }
        let mut seen = HashSet::with_capacity(n_negatives);
        let mut negatives = Vec::with_capacity(n_negatives);
        while negatives.len() < n_negatives {
            let c = rng.gen_range(0..n_accounts);
            let p = (a.min(c), a.max(c));
            if c != a && !excluded.contains(&p) && seen.insert(p) {
                negatives.push(p);
            }
        }
        tasks.push(RankingTask {
            positive: (a.min(b), a.max(b)),
            negatives,
        });
    }
    Ok(tasks)
}

/// Scores every candidate with one call to `score` and groups the results
/// back into instances.
pub fn score_tasks<F>(tasks: &[RankingTask], score: F) -> Result<Vec<RankingInstance>>
where
    F: FnOnce(&[(usize, usize)]) -> Result<Vec<f64>>,
{
    let pairs: Vec<(usize, usize)> = tasks.iter().flat_map(RankingTask::candidates).collect();
    let scores = score(&pairs)?;
    if scores.len() != pairs.len() {
        return Err(Error::dim(
            "score_tasks",
            format!("{} scores for {} candidates", scores.len(), pairs.len()),
        ));
    }
    let mut out = Vec::with_capacity(tasks.len());
    let mut at = 0;
    for t in tasks {
        let n = t.negatives.len();
        out.push(RankingInstance {
            positive: scores[at],
            negatives: scores[at + 1..at + 1 + n].to_vec(),
        });
        at += 1 + n;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn negatives_share_first_endpoint_and_avoid_exclusions() {
        let excluded: HashSet<_> = [(0, 1), (0, 2), (3, 4)].into_iter().collect();
        let tasks = build_ranking_tasks(&[(1, 0), (3, 4)], 60, &excluded, 50, 7).unwrap();
        assert_eq!(tasks[0].positive, (0, 1));
        for (t, a) in tasks.iter().zip([1, 3]) {
            assert_eq!(t.candidates().count(), 51);
            let uniq: HashSet<_> = t.negatives.iter().collect();
            assert_eq!(uniq.len(), 50);
            for &(x, y) in &t.negatives {
                assert!(x == a || y == a);
                assert!(x < y && !excluded.contains(&(x, y)));
            }
        }
        assert_eq!(tasks, build_ranking_tasks(&[(1, 0), (3, 4)], 60, &excluded, 50, 7).unwrap());
    }

    #[test]
    fn too_few_candidates_is_config_error() {
        let r = build_ranking_tasks(&[(0, 1)], 10, &HashSet::new(), 50, 0);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn scores_regroup_in_order() {
        let tasks = vec![
            RankingTask {
                positive: (0, 1),
                negatives: vec![(0, 2), (0, 3)],
            },
            RankingTask {
                positive: (4, 5),
                negatives: vec![(4, 6)],
            },
        ];
        let inst = score_tasks(&tasks, |p| Ok(p.iter().map(|&(a, b)| (a * 10 + b) as f64).collect())).unwrap();
        assert_eq!(inst[0].positive, 1.0);
        assert_eq!(inst[0].negatives, vec![2.0, 3.0]);
        assert_eq!(inst[1].negatives, vec![46.0]);
    }
}
