//! Generates a synthetic mixer graph and prints its structural statistics
//! with and without transaction edges.

use anyhow::Result;
use hilomix::graph::{generate_synthetic, graph_stats, StatsView, SyntheticConfig};

fn main() -> Result<()> {
    let data = generate_synthetic(&SyntheticConfig::default())?;
    let g = &data.graph;
    println!(
        "{} accounts, {} contracts, {} transaction edges, {} labeled pairs ({} flipped)",
        g.n_accounts(),
        g.n_contracts(),
        g.tx_edges.len(),
        g.assoc_edges.len(),
        data.truth.n_flipped()
    );
    for view in [StatsView::AssocOnly, StatsView::Full] {
        let s = graph_stats(g, view);
        println!(
            "{view:?}: edges={} avg_degree={:.3} clustering={:.4} density={:.6}",
            s.n_edges, s.average_degree, s.average_clustering, s.density
        );
    }
    Ok(())
}
