//! Trains the GNN, builds out-of-fold predictions for all five base models,
//! fits the meta-learner and compares held-out AUCs against planted truth.

use anyhow::Result;
use hilomix::config::DataConfig;
use hilomix::ensemble::{BaseKind, EnsembleConfig};
use hilomix::eval::auc;
use hilomix::pipeline::{fit_pipeline, method_name, Dataset, Scorer, Split};
use hilomix::trainer::TrainConfig;

fn main() -> Result<()> {
    env_logger::init();
    let seed = 0;
    let data_cfg = DataConfig::default();
    let ds = Dataset::load(&data_cfg, seed)?;
    let split = Split::new(&ds.graph, data_cfg.test_fraction, seed)?;
    let ens = EnsembleConfig {
        seed,
        ..EnsembleConfig::default()
    };
    let fitted = fit_pipeline(&ds, &split, &TrainConfig::default(), &ens, seed)?;

    let scorer = Scorer::new(&fitted.outcome.model, &fitted.ctx, &fitted.stack)?;
    let pairs = ds.pairs(&split.test);
    let labels = ds.eval_labels(&split.test);
    let base = scorer.base_predictions(&pairs)?;
    for kind in BaseKind::ALL {
        let col: Vec<f64> = (0..pairs.len()).map(|r| base.get(r, kind.column())).collect();
        let oof = auc(&fitted.oof.column(kind), &fitted.oof.labels)?;
        println!("{:<8} held-out AUC {:.4}  out-of-fold AUC {:.4}", method_name(kind), auc(&col, &labels)?, oof);
    }
    let stacked = fitted.stack.meta.predict_proba(&base)?;
    println!("stacked  held-out AUC {:.4}", auc(&stacked, &labels)?);
    println!("meta weights {:?}", fitted.stack.meta.weights);
    Ok(())
}
