//! Classification and ranking metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// F1 of the positive class with predictions `score >= threshold`.
/// Zero when there are no true or no predicted positives.
pub fn f1_score(scores: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::dim(
            "f1_score",
            format!("{} scores for {} labels", scores.len(), labels.len()),
        ));
    }
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        return Ok(0.0);
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fneg) as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Area under the ROC curve by the rank-sum statistic with midranks for ties.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::dim(
            "auc",
            format!("{} scores for {} labels", scores.len(), labels.len()),
        ));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUC needs both classes".into()));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("score {s}")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let np = n_pos as f64;
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// Rank of the positive among its candidates in descending score order,
/// counting a tie group at its mean position.
pub fn positive_rank(positive: f64, negatives: &[f64]) -> f64 {
    let greater = negatives.iter().filter(|&&s| s > positive).count();
    let ties = negatives.iter().filter(|&&s| s == positive).count();
    greater as f64 + (ties as f64 + 2.0) / 2.0
}

/// One positive score against its sampled negatives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingInstance {
    pub positive: f64,
    pub negatives: Vec<f64>,
}

impl RankingInstance {
    pub fn rank(&self) -> f64 {
        positive_rank(self.positive, &self.negatives)
    }
}

pub fn mrr(tasks: &[RankingInstance]) -> f64 {
    if tasks.is_empty() {
        return 0.0;
    }
    tasks.iter().map(|t| 1.0 / t.rank()).sum::<f64>() / tasks.len() as f64
}

pub fn hits_at_k(tasks: &[RankingInstance], k: usize) -> f64 {
    if tasks.is_empty() {
        return 0.0;
    }
    tasks.iter().filter(|t| t.rank() <= k as f64).count() as f64 / tasks.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub f1: f64,
    pub auc: f64,
    pub mrr: f64,
    pub hits3: f64,
    pub hits5: f64,
    pub hits10: f64,
}

impl MetricSet {
    pub fn compute(scores: &[f64], labels: &[u8], ranking: &[RankingInstance]) -> Result<Self> {
        Ok(Self {
            f1: f1_score(scores, labels, 0.5)?,
            auc: auc(scores, labels)?,
            mrr: mrr(ranking),
            hits3: hits_at_k(ranking, 3),
            hits5: hits_at_k(ranking, 5),
            hits10: hits_at_k(ranking, 10),
        })
    }

    pub fn values(&self) -> [f64; 6] {
        [self.f1, self.auc, self.mrr, self.hits3, self.hits5, self.hits10]
    }

    pub const NAMES: [&'static str; 6] = ["F1", "AUC", "MRR", "Hits@3", "Hits@5", "Hits@10"];
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let s = [0.9, 0.8, 0.1, 0.2];
        let y = [1, 1, 0, 0];
        assert_eq!(f1_score(&s, &y, 0.5).unwrap(), 1.0);
        assert_eq!(auc(&s, &y).unwrap(), 1.0);
    }

    #[test]
    fn half_precision_full_recall() {
        let s = [0.9, 0.9, 0.9, 0.9];
        let y = [1, 1, 0, 0];
        assert!((f1_score(&s, &y, 0.5).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn all_equal_scores_give_half_auc() {
        assert_eq!(auc(&[0.3; 6], &[1, 0, 1, 0, 0, 1]).unwrap(), 0.5);
    }

    #[test]
    fn single_class_auc_is_undefined() {
        assert!(matches!(auc(&[0.1, 0.2], &[1, 1]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn mrr_of_known_ranks() {
        let task = |r: usize| RankingInstance {
            positive: 0.5,
            negatives: (0..10).map(|i| if i + 1 < r { 0.9 } else { 0.1 }).collect(),
        };
        let tasks = [task(1), task(2), task(4)];
        assert_eq!(tasks.iter().map(RankingInstance::rank).collect::<Vec<_>>(), vec![1.0, 2.0, 4.0]);
        assert!((mrr(&tasks) - (1.0 + 0.5 + 0.25) / 3.0).abs() < 1e-15);
        assert_eq!(hits_at_k(&[task(1), task(4)], 3), 0.5);
        assert_eq!(hits_at_k(&tasks, 51), 1.0);
    }

    #[test]
    fn full_tie_gives_mean_rank() {
        let t = RankingInstance {
            positive: 0.5,
            negatives: vec![0.5; 50],
        };
        assert_eq!(t.rank(), 26.0);
        assert!((mrr(&[t]) - 1.0 / 26.0).abs() < 1e-15);
    }

    proptest::proptest! {
        #[test]
        fn auc_complements_under_negation(
            rows in proptest::collection::vec((0u8..10, 0u8..2), 2..60)
        ) {
            let mut labels: Vec<u8> = rows.iter().map(|r| r.1).collect();
            labels[0] = 0;
            labels[1] = 1;
            let s: Vec<f64> = rows.iter().map(|r| f64::from(r.0)).collect();
            let neg: Vec<f64> = s.iter().map(|v| -v).collect();
            let a = auc(&s, &labels).unwrap();
            proptest::prop_assert!((0.0..=1.0).contains(&a));
            proptest::prop_assert!((a + auc(&neg, &labels).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn hits_grow_with_k_and_bound_mrr(
            tasks in proptest::collection::vec((0u8..5, proptest::collection::vec(0u8..5, 1..30)), 1..20)
        ) {
            let tasks: Vec<RankingInstance> = tasks
                .into_iter()
                .map(|(p, n)| RankingInstance { positive: f64::from(p), negatives: n.into_iter().map(f64::from).collect() })
                .collect();
            let m = mrr(&tasks);
            proptest::prop_assert!(m > 0.0 && m <= 1.0);
            proptest::prop_assert!(hits_at_k(&tasks, 1) <= m + 1e-12);
            proptest::prop_assert!(hits_at_k(&tasks, 3) <= hits_at_k(&tasks, 5));
            proptest::prop_assert!(hits_at_k(&tasks, 5) <= hits_at_k(&tasks, 10));
        }
    }
}
