//! Scores every edge of a small graph for smoothness, splits it into low-
//! and high-frequency views and propagates features through both.

use anyhow::Result;
use hilomix::dual_gnn::{propagate_high, propagate_low};
use hilomix::freq_decomp::{score_edges, split_views, PropagationGraph, SmoothnessScorer};
use hilomix::numerics::{DenseMatrix, ParamStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    // Two triangles joined by one bridge.
    let edges = vec![(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5), (2, 3)];
    let graph = PropagationGraph::new(6, edges.clone())?;
    let h0 = DenseMatrix::from_vec(6, 4, (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect())?;

    let mut store = ParamStore::new();
    let scorer = SmoothnessScorer::new(&mut store, 4, &mut rng);
    let s = score_edges(&scorer, &store, &h0, &edges)?;
    let views = split_views(&graph.adj, &s)?;
    for (e, (&(i, j), si)) in edges.iter().zip(&s).enumerate() {
        println!("edge {e} ({i},{j}): s={si:.4} low={:.4} high={:.4}", views.low.weight_at(i, j).unwrap_or(0.0), views.high.weight_at(i, j).unwrap_or(0.0));
    }

    let low = propagate_low(&h0, &views.low_norm, 2)?;
    let high = propagate_high(&h0, &views.high_norm, 2, 0.5)?;
    println!("node 0 input: {:?}", h0.row(0));
    println!("node 0 low  : {:?}", low.row(0));
    println!("node 0 high : {:?}", high.row(0));
    Ok(())
}
