//! Trains the dual-branch model on a noisy synthetic graph and follows the
//! clean / flipped / remaining label sets epoch by epoch.

use anyhow::Result;
use hilomix::graph::SyntheticConfig;
use hilomix::pipeline::{dynamics, train_model, Dataset, Split};
use hilomix::trainer::TrainConfig;

fn main() -> Result<()> {
    env_logger::init();
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let data_cfg = hilomix::config::DataConfig {
        synthetic: SyntheticConfig {
            noise_rate: 0.2,
            ..SyntheticConfig::default()
        },
        ..Default::default()
    };
    let ds = Dataset::load(&data_cfg, seed)?;
    let split = Split::new(&ds.graph, data_cfg.test_fraction, seed)?;
    let cfg = TrainConfig::default();
    let (_, outcome) = train_model(&ds, &split, &cfg, seed)?;

    println!("epoch  clean  flipped  remaining  flipped_precision  l_con   l_sup");
    for (row, log) in dynamics(&outcome, ds.truth.as_ref()).iter().zip(&outcome.logs) {
        let prec = row.cf_precision.map_or("-".to_string(), |p| format!("{p:.3}"));
        println!(
            "{:>5}  {:>5}  {:>7}  {:>9}  {:>17}  {:.3}  {:.3}",
            row.epoch, row.n_clean, row.n_flipped, row.n_remaining, prec, log.l_con, log.l_sup
        );
    }
    Ok(())
}
