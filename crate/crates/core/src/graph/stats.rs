//! Structural statistics of the association-only and full graph views.

use serde::{Deserialize, Serialize};

use crate::graph::hamig::Hamig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatsView {
    /// Accounts joined only by positively labeled associations.
    AssocOnly,
    /// Transaction edges plus positively labeled associations.
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub n_nodes: usize,
    pub n_edges: usize,
    pub average_degree: f64,
    pub average_clustering: f64,
    pub density: f64,
}

/// Both views range over every node of the graph so their degrees are
/// comparable.
pub fn graph_stats(g: &Hamig, view: StatsView) -> GraphStats {
    let mut edges: Vec<(usize, usize)> = g.positive_assoc().map(|e| e.pair()).collect();
    if view == StatsView::Full {
        edges.extend(g.tx_node_edges());
    }
    stats_from_edges(g.n_nodes(), &edges)
}

/// Statistics of a simple undirected graph. Duplicate edges and self-loops
/// are ignored.
pub fn stats_from_edges(n: usize, edges: &[(usize, usize)]) -> GraphStats {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(u, v) in edges {
        if u != v {
            adj[u].push(v);
            adj[v].push(u);
        }
    }
    for nbrs in &mut adj {
        nbrs.sort_unstable();
        nbrs.dedup();
    }
    let degree_sum: usize = adj.iter().map(Vec::len).sum();
    let m = degree_sum / 2;
    let mut clustering = 0.0;
    for nbrs in &adj {
        let k = nbrs.len();
        if k < 2 {
            continue;
        }
        let mut links = 0usize;
        for (x, &u) in nbrs.iter().enumerate() {
            for &v in &nbrs[x + 1..] {
                if adj[u].binary_search(&v).is_ok() {
                    links += 1;
                }
            }
        }
        clustering += 2.0 * links as f64 / (k * (k - 1)) as f64;
    }
    let nf = n as f64;
    GraphStats {
        n_nodes: n,
        n_edges: m,
        average_degree: if n == 0 { 0.0 } else { 2.0 * m as f64 / nf },
        average_clustering: if n == 0 { 0.0 } else { clustering / nf },
        density: if n < 2 { 0.0 } else { 2.0 * m as f64 / (nf * (nf - 1.0)) },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::synthetic::{generate_synthetic, SyntheticConfig};

    #[test]
    fn path_graph() {
        let s = stats_from_edges(3, &[(0, 1), (1, 2)]);
        assert!((s.average_degree - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.average_clustering, 0.0);
        assert!((s.density - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn triangle() {
        let s = stats_from_edges(3, &[(0, 1), (1, 2), (2, 0)]);
        assert_eq!(s.average_clustering, 1.0);
        assert_eq!(s.density, 1.0);
    }

    #[test]
    fn duplicate_edges_ignored() {
        let s = stats_from_edges(2, &[(0, 1), (1, 0), (0, 0)]);
        assert_eq!(s.n_edges, 1);
    }

    #[test]
    fn full_view_is_denser() {
        for seed in 0..3 {
            let cfg = SyntheticConfig {
                n_accounts: 200,
                n_contracts: 4,
                n_users: 100,
                n_assoc_labels: 60,
                seed,
                ..SyntheticConfig::default()
            };
            let d = generate_synthetic(&cfg).unwrap();
            let a = graph_stats(&d.graph, StatsView::AssocOnly);
            let f = graph_stats(&d.graph, StatsView::Full);
            assert!(f.average_degree >= a.average_degree);
            assert_eq!(a.n_nodes, f.n_nodes);
        }
    }
}
