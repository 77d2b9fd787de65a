//! Builds one-side-corrupted ranking tasks and scores them with a toy
//! similarity, reporting MRR and Hits@K.

use std::collections::HashSet;

use anyhow::Result;
use hilomix::eval::{build_ranking_tasks, hits_at_k, mrr, score_tasks};

fn main() -> Result<()> {
    let n_accounts = 500;
    // Accounts 2k and 2k+1 belong together.
    let positives: Vec<(usize, usize)> = (0..40).map(|k| (2 * k, 2 * k + 1)).collect();
    let excluded: HashSet<(usize, usize)> = positives.iter().copied().collect();
    let tasks = build_ranking_tasks(&positives, n_accounts, &excluded, 50, 7)?;
    let ranking = score_tasks(&tasks, |pairs| {
        Ok(pairs
            .iter()
            .map(|&(a, b)| if a / 2 == b / 2 { 0.93 } else { ((a * 31 + b * 17) % 100) as f64 / 100.0 })
            .collect())
    })?;
    println!("tasks: {}  candidates per task: {}", tasks.len(), tasks[0].candidates().count());
    println!("MRR {:.4}", mrr(&ranking));
    for k in [3, 5, 10] {
        println!("Hits@{k} {:.4}", hits_at_k(&ranking, k));
    }
    Ok(())
}
