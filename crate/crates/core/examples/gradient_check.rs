//! Finite-difference check of the full training objective on a tiny graph.

use anyhow::Result;
use hilomix::dual_gnn::{HiLoModel, ModelConfig};
use hilomix::graph::{generate_synthetic, SyntheticConfig};
use hilomix::numerics::grad_check;
use hilomix::trainer::{batch_loss, TrainConfig, TrainContext};

fn main() -> Result<()> {
    let data = generate_synthetic(&SyntheticConfig {
        n_accounts: 10,
        n_contracts: 2,
        n_users: 5,
        n_assoc_labels: 8,
        ..SyntheticConfig::default()
    })?;
    let cfg = TrainConfig {
        model: ModelConfig {
            hidden: 4,
            embed: 4,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    };
    let train: Vec<usize> = (0..data.graph.assoc_edges.len()).collect();
    let ctx = TrainContext::new(&data.graph, &train, &cfg)?;
    let mut model = HiLoModel::new(cfg.model.clone(), ctx.x.cols(), 1)?;
    let weights = vec![1.0; ctx.pairs.len()];
    let frozen = model.clone();
    let err = grad_check(
        &mut model.store,
        |tape, store| {
            let (_, _, total) = batch_loss(tape, &frozen, store, &ctx, &cfg, &ctx.pairs, &ctx.labels, &weights)?;
            Ok(total)
        },
        1e-6,
        None,
        0,
    )?;
    println!("max relative gradient error: {err:.3e}");
    Ok(())
}
