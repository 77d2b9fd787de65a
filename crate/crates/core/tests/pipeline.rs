//! Library-level pipeline behavior on small synthetic graphs.

use hilomix::config::DataConfig;
use hilomix::eval::auc;
use hilomix::graph::SyntheticConfig;
use hilomix::pipeline::{dynamics, train_model, Dataset, Split, StackTargets};
use hilomix::trainer::{head_probabilities, TrainConfig};

fn small_data(seed: u64) -> (Dataset, Split) {
    let cfg = DataConfig {
        synthetic: SyntheticConfig {
            n_accounts: 300,
            n_users: 150,
            n_assoc_labels: 120,
            ..SyntheticConfig::default()
        },
        ..DataConfig::default()
    };
    let ds = Dataset::load(&cfg, seed).unwrap();
    let split = Split::new(&ds.graph, cfg.test_fraction, seed).unwrap();
    (ds, split)
}

#[test]
fn untrained_heads_score_at_chance() {
    let (ds, split) = small_data(0);
    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let (ctx, mut out) = train_model(&ds, &split, &cfg, 0).unwrap();
    out.model.zero_heads().unwrap();
    let pairs = ds.pairs(&split.test);
    let probs = head_probabilities(&out.model, &ctx, &pairs).unwrap();
    assert!(probs.data().iter().all(|&p| p == 0.5));
    let col: Vec<f64> = (0..pairs.len()).map(|r| probs.get(r, 0)).collect();
    assert_eq!(auc(&col, &ds.eval_labels(&split.test)).unwrap(), 0.5);
}

#[test]
fn dynamics_has_one_row_per_epoch() {
    let (ds, split) = small_data(1);
    let cfg = TrainConfig {
        epochs: 7,
        ..TrainConfig::default()
    };
    let (_, out) = train_model(&ds, &split, &cfg, 1).unwrap();
    let rows = dynamics(&out, ds.truth.as_ref());
    assert_eq!(rows.len(), 7);
    assert!(rows.iter().enumerate().all(|(t, r)| r.epoch == t));
    assert_eq!(rows[0].n_flipped, 0);
    assert!(rows[0].cf_precision.is_none());
}

#[test]
fn stack_targets_cover_training_pairs_in_order() {
    let (ds, split) = small_data(2);
    let cfg = TrainConfig {
        epochs: 3,
        ..TrainConfig::default()
    };
    let (_, out) = train_model(&ds, &split, &cfg, 2).unwrap();
    let t = StackTargets::from_outcome(&out).unwrap();
    assert_eq!(t.pairs, ds.pairs(&split.train));
    let observed: Vec<u8> = split.train.iter().map(|&i| ds.graph.assoc_edges[i].label).collect();
    assert_eq!(t.observed, observed);

    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("targets.csv");
    t.write_csv(&path).unwrap();
    assert_eq!(StackTargets::read_csv(&path).unwrap(), t);
}
