//! The end-to-end pipeline, in memory and as on-disk stages.
//!
//! ```text
//! <out>/config.toml                       resolved configuration
//! <out>/seed-<S>-<hash>/config.toml       with the seed written in
//!     data/                               graph snapshot
//!     split.json  graph_stats.json
//!     train/model/  epochs.jsonl  partitions/epoch_NNN.csv
//!     train/dynamics.json  targets.csv
//!     stack/                              ensemble bundle
//!     eval/metrics.json  predictions.csv
//! <out>/report/report.md  metrics.json  label_dynamics.csv
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{Ablation, Config, DataConfig, EvalConfig};
use crate::dual_gnn::{Branch, BranchEmbeddings, HiLoModel};
use crate::ensemble::{
    assign_folds, fit_logistic, fit_stack, pair_features, write_predictions_csv, BaseInputs, BaseKind, EnsembleConfig,
    OofMatrix, StackedEnsemble,
};
use crate::error::{Error, Result};
use crate::eval::{
    aggregate, auc, build_ranking_tasks, render_markdown, write_dynamics_csv, DynamicsRow, GraphStatsPair, MetricRow,
    MetricSet, RankingInstance, RankingTask, Report, SeedMetrics,
};
use crate::graph::{
    generate_synthetic, graph_stats, ingest_hamig, read_json, read_snapshot, write_json, write_snapshot, Hamig,
    StatsView, SyntheticTruth,
};
use crate::numerics::DenseMatrix;
use crate::objectives::{write_partition_csv, LabelSet};
use crate::split::stratified_split;
use crate::trainer::{out_of_fold_predictions, run_training, write_epoch_logs, EpochPartition, TrainConfig, TrainContext, TrainOutcome};

/// Name of the stacked predictor in metric tables.
pub const STACKED: &str = "HiLoMix";

pub struct Dataset {
    pub graph: Hamig,
    pub truth: Option<SyntheticTruth>,
}

impl Dataset {
    /// Ingests the configured CSV pair, or generates a synthetic graph with
    /// `seed`.
    pub fn load(cfg: &DataConfig, seed: u64) -> Result<Self> {
        match (&cfg.transactions, &cfg.associations) {
            (Some(tx), Some(aa)) => Ok(Self {
                graph: ingest_hamig(tx, aa)?,
                truth: None,
            }),
            _ => {
                let d = generate_synthetic(&crate::graph::SyntheticConfig {
                    seed,
                    ..cfg.synthetic.clone()
                })?;
                Ok(Self {
                    graph: d.graph,
                    truth: Some(d.truth),
                })
            }
        }
    }

    pub fn pairs(&self, idx: &[usize]) -> Vec<(usize, usize)> {
        idx.iter().map(|&i| self.graph.assoc_edges[i].pair()).collect()
    }

    /// Labels scored at evaluation: planted truth when known, otherwise the
    /// observed labels.
    pub fn eval_labels(&self, idx: &[usize]) -> Vec<u8> {
        idx.iter()
            .map(|&i| {
                let e = &self.graph.assoc_edges[i];
                match &self.truth {
                    Some(t) => u8::from(t.same_user(e.a, e.b)),
                    None => e.label,
                }
            })
            .collect()
    }

    /// Pairs a ranking negative may not be: every labeled pair and, with
    /// planted truth, every same-user pair.
    pub fn ranking_exclusions(&self) -> HashSet<(usize, usize)> {
        let mut out = self.graph.labeled_pairs();
        if let Some(t) = &self.truth {
            let mut by_owner: Vec<Vec<usize>> = Vec::new();
            for (a, &o) in t.owners.iter().enumerate() {
                if o >= by_owner.len() {
                    by_owner.resize(o + 1, Vec::new());
                }
                by_owner[o].push(a);
            }
            for accts in &by_owner {
                for (x, &a) in accts.iter().enumerate() {
                    for &b in &accts[x + 1..] {
                        out.insert((a.min(b), a.max(b)));
                    }
                }
            }
        }
        out
    }

    pub fn stats(&self) -> GraphStatsPair {
        GraphStatsPair {
            assoc_only: graph_stats(&self.graph, StatsView::AssocOnly),
            full: graph_stats(&self.graph, StatsView::Full),
        }
    }
}

/// Indices into the graph's association edges.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Stratified by observed label.
    pub fn new(g: &Hamig, test_fraction: f64, seed: u64) -> Result<Self> {
        let labels: Vec<u8> = g.assoc_edges.iter().map(|e| e.label).collect();
        let (train, test) = stratified_split(&labels, test_fraction, seed)?;
        Ok(Self { train, test })
    }
}

/// Training pairs with their observed labels and the labels corrected by the
/// final partition; the stacking layer fits the corrected ones.
#[derive(Clone, Debug, PartialEq)]
pub struct StackTargets {
    pub pairs: Vec<(usize, usize)>,
    pub observed: Vec<u8>,
    pub targets: Vec<u8>,
}

impl StackTargets {
    pub fn from_outcome(outcome: &TrainOutcome) -> Result<Self> {
        let ep = outcome
            .final_partition()
            .ok_or_else(|| Error::Contract("stacking needs at least one training epoch".into()))?;
        let n = ep.n_labeled;
        Ok(Self {
            pairs: ep.pairs[..n].to_vec(),
            observed: ep.labels[..n].to_vec(),
            targets: ep.partition.targets()[..n].to_vec(),
        })
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["a", "b", "y", "y_hat"])?;
        for ((&(a, b), y), t) in self.pairs.iter().zip(&self.observed).zip(&self.targets) {
            w.write_record([a.to_string(), b.to_string(), y.to_string(), t.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut out = Self {
            pairs: Vec::new(),
            observed: Vec::new(),
            targets: Vec::new(),
        };
        for row in csv::Reader::from_path(path.as_ref())?.deserialize::<(usize, usize, u8, u8)>() {
            let (a, b, y, t) = row?;
            out.pairs.push((a, b));
            out.observed.push(y);
            out.targets.push(t);
        }
        Ok(out)
    }
}

/// Share of `E_cf` that is truly mislabeled: a flipped labeled pair, or a
/// sampled negative whose endpoints share a user. `None` when `E_cf` is empty.
pub fn cf_precision(ep: &EpochPartition, truth: &SyntheticTruth) -> Option<f64> {
    let cf = ep.partition.indices(LabelSet::Flipped);
    if cf.is_empty() {
        return None;
    }
    let flipped = truth.flipped_pairs();
    let hits = cf
        .iter()
        .filter(|&&i| {
            let (a, b) = ep.pairs[i];
            if i < ep.n_labeled {
                flipped.contains(&(a, b))
            } else {
                truth.same_user(a, b)
            }
        })
        .count();
    Some(hits as f64 / cf.len() as f64)
}

pub fn dynamics(outcome: &TrainOutcome, truth: Option<&SyntheticTruth>) -> Vec<DynamicsRow> {
    outcome
        .logs
        .iter()
        .zip(&outcome.history)
        .map(|(l, ep)| DynamicsRow {
            epoch: l.epoch,
            n_clean: l.n_clean,
            n_flipped: l.n_flipped,
            n_remaining: l.n_remaining,
            clean_fraction: l.clean_fraction,
            cf_precision: truth.and_then(|t| cf_precision(ep, t)),
        })
        .collect()
}

pub fn train_model(ds: &Dataset, split: &Split, cfg: &TrainConfig, seed: u64) -> Result<(TrainContext, TrainOutcome)> {
    let ctx = TrainContext::new(&ds.graph, &split.train, cfg)?;
    let outcome = run_training(&ctx, cfg, seed)?;
    Ok((ctx, outcome))
}

/// Fits the stack on the training pairs. The GNN columns come from one
/// retrained GNN per fold.
pub fn stack_model(
    ds: &Dataset,
    split: &Split,
    train_cfg: &TrainConfig,
    ens_cfg: &EnsembleConfig,
    model: &HiLoModel,
    ctx: &TrainContext,
    targets: &StackTargets,
    seed: u64,
) -> Result<(StackedEnsemble, OofMatrix)> {
    let folds = assign_folds(&targets.targets, ens_cfg)?;
    let gnn = out_of_fold_predictions(&ds.graph, &split.train, &folds, ens_cfg.k_folds, train_cfg, seed)?;
    let emb = model.embed(&ctx.x, &ctx.graph)?;
    let inputs = BaseInputs::new(gnn, pair_features(&emb, &ctx.x, &targets.pairs)?)?;
    fit_stack(&inputs, &targets.targets, &folds, ens_cfg)
}

/// A trained GNN with its fitted stack.
pub struct Fitted {
    pub ctx: TrainContext,
    pub outcome: TrainOutcome,
    pub targets: StackTargets,
    pub stack: StackedEnsemble,
    pub oof: OofMatrix,
}

pub fn fit_pipeline(ds: &Dataset, split: &Split, train_cfg: &TrainConfig, ens_cfg: &EnsembleConfig, seed: u64) -> Result<Fitted> {
    let (ctx, outcome) = train_model(ds, split, train_cfg, seed)?;
    let targets = StackTargets::from_outcome(&outcome)?;
    let (stack, oof) = stack_model(ds, split, train_cfg, ens_cfg, &outcome.model, &ctx, &targets, seed)?;
    Ok(Fitted {
        ctx,
        outcome,
        targets,
        stack,
        oof,
    })
}

/// Scores arbitrary account pairs with frozen embeddings.
pub struct Scorer<'a> {
    model: &'a HiLoModel,
    x: &'a DenseMatrix,
    emb: BranchEmbeddings,
    stack: &'a StackedEnsemble,
}

impl<'a> Scorer<'a> {
    pub fn new(model: &'a HiLoModel, ctx: &'a TrainContext, stack: &'a StackedEnsemble) -> Result<Self> {
        Ok(Self {
            model,
            x: &ctx.x,
            emb: model.embed(&ctx.x, &ctx.graph)?,
            stack,
        })
    }

    pub fn inputs(&self, pairs: &[(usize, usize)]) -> Result<BaseInputs> {
        let lf = self.model.predict_pairs(&self.emb, Branch::Low, pairs)?;
        let hf = self.model.predict_pairs(&self.emb, Branch::High, pairs)?;
        let gnn = (0..pairs.len()).flat_map(|r| [lf.get(r, 1), hf.get(r, 1)]).collect();
        BaseInputs::new(
            DenseMatrix::from_vec(pairs.len(), 2, gnn)?,
            pair_features(&self.emb, self.x, pairs)?,
        )
    }

    /// `n×5` base predictions in [`BaseKind::ALL`] order.
    pub fn base_predictions(&self, pairs: &[(usize, usize)]) -> Result<DenseMatrix> {
        self.stack.base_predictions(&self.inputs(pairs)?)
    }

    pub fn predict(&self, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
        self.stack.predict(&self.inputs(pairs)?)
    }
}

/// Held-out pairs and ranking tasks shared by every method of one seed.
pub struct EvalSet {
    pub test_pairs: Vec<(usize, usize)>,
    pub test_labels: Vec<u8>,
    pub tasks: Vec<RankingTask>,
}

impl EvalSet {
    /// Ranking tasks are built for every held-out pair labeled positive.
    pub fn new(ds: &Dataset, split: &Split, cfg: &EvalConfig, seed: u64) -> Result<Self> {
        let test_pairs = ds.pairs(&split.test);
        let test_labels = ds.eval_labels(&split.test);
        let positives: Vec<(usize, usize)> = test_pairs
            .iter()
            .zip(&test_labels)
            .filter(|(_, &y)| y == 1)
            .map(|(&p, _)| p)
            .collect();
        let tasks = build_ranking_tasks(
            &positives,
            ds.graph.n_accounts(),
            &ds.ranking_exclusions(),
            cfg.n_negatives,
            seed ^ 0x7a5c_0000,
        )?;
        Ok(Self {
            test_pairs,
            test_labels,
            tasks,
        })
    }

    /// Held-out pairs followed by every ranking candidate.
    pub fn all_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = self.test_pairs.clone();
        out.extend(self.tasks.iter().flat_map(RankingTask::candidates));
        out
    }

    /// Metrics of scores aligned with [`EvalSet::all_pairs`].
    pub fn metrics(&self, scores: &[f64]) -> Result<MetricSet> {
        let n = self.test_pairs.len();
        let mut at = n;
        let mut ranking = Vec::with_capacity(self.tasks.len());
        for t in &self.tasks {
            let k = t.negatives.len();
            ranking.push(RankingInstance {
                positive: scores[at],
                negatives: scores[at + 1..at + 1 + k].to_vec(),
            });
            at += 1 + k;
        }
        if at != scores.len() {
            return Err(Error::dim("EvalSet::metrics", format!("{} scores for {at} pairs", scores.len())));
        }
        MetricSet::compute(&scores[..n], &self.test_labels, &ranking)
    }
}

fn column(m: &DenseMatrix, c: usize) -> Vec<f64> {
    (0..m.rows()).map(|r| m.get(r, c)).collect()
}

pub fn method_name(kind: BaseKind) -> &'static str {
    match kind {
        BaseKind::HeadLf => "LF GNN",
        BaseKind::HeadHf => "HF GNN",
        BaseKind::Logistic => "LR",
        BaseKind::Forest => "RF",
        BaseKind::Mlp => "MLP",
    }
}

/// Meta-learners over a subset of the stack's columns.
const COLUMN_ABLATIONS: [(&str, &[BaseKind]); 4] = [
    ("w/o hetero models", &[BaseKind::HeadLf, BaseKind::HeadHf]),
    ("w/o HiLo GNNs", &[BaseKind::Logistic, BaseKind::Forest, BaseKind::Mlp]),
    ("w/o Hi GNN", &[BaseKind::HeadLf, BaseKind::Logistic, BaseKind::Forest, BaseKind::Mlp]),
    ("w/o Lo GNN", &[BaseKind::HeadHf, BaseKind::Logistic, BaseKind::Forest, BaseKind::Mlp]),
];

/// Rows for every base model and the stack, then the column ablations and
/// the single-branch fallback.
pub fn evaluate_stack(
    scorer: &Scorer,
    stack: &StackedEnsemble,
    oof: &OofMatrix,
    set: &EvalSet,
) -> Result<(Vec<MetricRow>, Vec<MetricRow>)> {
    let base = scorer.base_predictions(&set.all_pairs())?;
    let mut methods = Vec::new();
    for kind in BaseKind::ALL {
        methods.push(MetricRow {
            name: method_name(kind).into(),
            metrics: set.metrics(&column(&base, kind.column()))?,
        });
    }
    methods.push(MetricRow {
        name: STACKED.into(),
        metrics: set.metrics(&stack.meta.predict_proba(&base)?)?,
    });

    let mut ablations = Vec::new();
    for (name, kinds) in COLUMN_ABLATIONS {
        let cols: Vec<usize> = kinds.iter().map(|k| k.column()).collect();
        let meta = fit_logistic(&oof.predictions.select_cols(&cols)?, &oof.labels, &stack.config.meta)?;
        ablations.push(MetricRow {
            name: name.into(),
            metrics: set.metrics(&meta.predict_proba(&base.select_cols(&cols)?)?)?,
        });
    }
    ablations.push(MetricRow {
        name: "w/o stacking".into(),
        metrics: set.metrics(&column(&base, best_branch(oof)?.column()))?,
    });
    Ok((methods, ablations))
}

/// The GNN head with the higher out-of-fold AUC; low-pass on ties.
pub fn best_branch(oof: &OofMatrix) -> Result<BaseKind> {
    let lf = auc(&oof.column(BaseKind::HeadLf), &oof.labels)?;
    let hf = auc(&oof.column(BaseKind::HeadHf), &oof.labels)?;
    Ok(if hf > lf { BaseKind::HeadHf } else { BaseKind::HeadLf })
}

/// Stacked metrics of a fresh pipeline under one retraining ablation.
pub fn evaluate_ablation(
    ds: &Dataset,
    split: &Split,
    cfg: &Config,
    ablation: Ablation,
    set: &EvalSet,
    seed: u64,
) -> Result<MetricRow> {
    log::info!("seed {seed}: ablation `{}`", ablation.label());
    let fitted = fit_pipeline(ds, split, &ablation.apply(&cfg.train), &cfg.ensemble, seed)?;
    let scorer = Scorer::new(&fitted.outcome.model, &fitted.ctx, &fitted.stack)?;
    Ok(MetricRow {
        name: ablation.label().into(),
        metrics: set.metrics(&scorer.predict(&set.all_pairs())?)?,
    })
}

/// Evaluates a fitted pipeline, then runs the configured retraining
/// ablations. Ablation rows follow the column ablations, with the
/// single-branch fallback last.
pub fn evaluate_seed(
    ds: &Dataset,
    split: &Split,
    cfg: &Config,
    model: &HiLoModel,
    ctx: &TrainContext,
    stack: &StackedEnsemble,
    oof: &OofMatrix,
    seed: u64,
) -> Result<SeedMetrics> {
    let set = EvalSet::new(ds, split, &cfg.eval, seed)?;
    let scorer = Scorer::new(model, ctx, stack)?;
    let (methods, mut ablations) = evaluate_stack(&scorer, stack, oof, &set)?;
    let fallback = ablations.pop().expect("fallback row");
    for &a in &cfg.eval.ablations {
        ablations.push(evaluate_ablation(ds, split, cfg, a, &set, seed)?);
    }
    ablations.push(fallback);
    Ok(SeedMetrics {
        seed,
        n_test: set.test_pairs.len(),
        n_ranking_tasks: set.tasks.len(),
        methods,
        ablations,
    })
}

pub fn protocol(cfg: &Config) -> String {
    format!(
        "held-out pairs are {:.0}% of labeled associations, stratified by observed label, and are scored \
         against planted truth when it is known. F1 uses threshold 0.5. Ranking: every positive held-out pair \
         (a, b) against {} negatives (a, c), with c drawn uniformly from accounts such that (a, c) is neither \
         a labeled pair nor a planted association.",
        cfg.data.test_fraction * 100.0,
        cfg.eval.n_negatives
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Generate,
    Train,
    Stack,
    Eval,
    Report,
    All,
}

pub fn seed_dir(out: &Path, cfg: &Config, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}-{}", cfg.hash()))
}

fn write_config(dir: &Path, cfg: &Config) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("config.toml");
    fs::write(&path, cfg.to_toml()?).map_err(|e| Error::io(&path, e))
}

fn load_data(dir: &Path) -> Result<(Dataset, Split)> {
    let (graph, truth) = read_snapshot(dir.join("data"))?;
    let split = read_json(&dir.join("split.json"))?;
    Ok((Dataset { graph, truth }, split))
}

pub fn stage_generate(cfg: &Config, seed: u64, out: &Path) -> Result<PathBuf> {
    let dir = seed_dir(out, cfg, seed);
    let cfg = cfg.for_seed(seed);
    write_config(&dir, &cfg)?;
    let ds = Dataset::load(&cfg.data, seed)?;
    let data_dir = dir.join("data");
    if data_dir.exists() {
        fs::remove_dir_all(&data_dir).map_err(|e| Error::io(&data_dir, e))?;
    }
    write_snapshot(&data_dir, &ds.graph, ds.truth.as_ref())?;
    write_json(&dir.join("split.json"), &Split::new(&ds.graph, cfg.data.test_fraction, seed)?)?;
    write_json(&dir.join("graph_stats.json"), &ds.stats())?;
    log::info!("seed {seed}: generated data in {}", dir.display());
    Ok(dir)
}

pub fn stage_train(cfg: &Config, seed: u64, out: &Path) -> Result<()> {
    let dir = seed_dir(out, cfg, seed);
    let (ds, split) = load_data(&dir)?;
    let (_, outcome) = train_model(&ds, &split, &cfg.train, seed)?;
    let train_dir = dir.join("train");
    if train_dir.exists() {
        fs::remove_dir_all(&train_dir).map_err(|e| Error::io(&train_dir, e))?;
    }
    let part_dir = train_dir.join("partitions");
    fs::create_dir_all(&part_dir).map_err(|e| Error::io(&part_dir, e))?;
    outcome.model.save(train_dir.join("model"))?;
    write_epoch_logs(train_dir.join("epochs.jsonl"), &outcome.logs)?;
    for (t, ep) in outcome.history.iter().enumerate() {
        write_partition_csv(
            part_dir.join(format!("epoch_{t:03}.csv")),
            &ep.pairs,
            &ep.labels,
            &ep.l_mul,
            &ep.partition,
        )?;
    }
    write_json(&train_dir.join("dynamics.json"), &dynamics(&outcome, ds.truth.as_ref()))?;
    StackTargets::from_outcome(&outcome)?.write_csv(train_dir.join("targets.csv"))?;
    log::info!("seed {seed}: trained {} epochs", outcome.logs.len());
    Ok(())
}

fn load_model(dir: &Path, ds: &Dataset, split: &Split, cfg: &Config) -> Result<(HiLoModel, TrainContext)> {
    let model = HiLoModel::load(dir.join("train").join("model"))?;
    let ctx = TrainContext::new(&ds.graph, &split.train, &cfg.train)?;
    Ok((model, ctx))
}

pub fn stage_stack(cfg: &Config, seed: u64, out: &Path) -> Result<()> {
    let dir = seed_dir(out, cfg, seed);
    let cfg = cfg.for_seed(seed);
    let (ds, split) = load_data(&dir)?;
    let (model, ctx) = load_model(&dir, &ds, &split, &cfg)?;
    let targets = StackTargets::read_csv(dir.join("train").join("targets.csv"))?;
    let (stack, oof) = stack_model(&ds, &split, &cfg.train, &cfg.ensemble, &model, &ctx, &targets, seed)?;
    stack.save(dir.join("stack"), &oof)?;
    log::info!("seed {seed}: stacked {} rows", oof.labels.len());
    Ok(())
}

pub fn stage_eval(cfg: &Config, seed: u64, out: &Path) -> Result<SeedMetrics> {
    let dir = seed_dir(out, cfg, seed);
    let cfg = cfg.for_seed(seed);
    let (ds, split) = load_data(&dir)?;
    let (model, ctx) = load_model(&dir, &ds, &split, &cfg)?;
    let stack_dir = dir.join("stack");
    let stack = StackedEnsemble::load(&stack_dir)?;
    let oof = crate::ensemble::read_oof_csv(stack_dir.join("oof.csv"))?;
    let metrics = evaluate_seed(&ds, &split, &cfg, &model, &ctx, &stack, &oof, seed)?;

    let eval_dir = dir.join("eval");
    fs::create_dir_all(&eval_dir).map_err(|e| Error::io(&eval_dir, e))?;
    write_json(&eval_dir.join("metrics.json"), &metrics)?;
    let test_pairs = ds.pairs(&split.test);
    let scorer = Scorer::new(&model, &ctx, &stack)?;
    let base = scorer.base_predictions(&test_pairs)?;
    let stacked = stack.meta.predict_proba(&base)?;
    write_predictions_csv(eval_dir.join("predictions.csv"), &test_pairs, &base, &stacked)?;
    log::info!("seed {seed}: evaluated {} held-out pairs", metrics.n_test);
    Ok(metrics)
}

pub fn stage_report(cfg: &Config, out: &Path) -> Result<Report> {
    let mut per_seed = Vec::new();
    let mut stats = Vec::new();
    let mut dyn_rows = Vec::new();
    for &seed in &cfg.seeds {
        let dir = seed_dir(out, cfg, seed);
        per_seed.push(read_json::<SeedMetrics>(&dir.join("eval").join("metrics.json"))?);
        stats.push(read_json::<GraphStatsPair>(&dir.join("graph_stats.json"))?);
        dyn_rows.push(read_json::<Vec<DynamicsRow>>(&dir.join("train").join("dynamics.json"))?);
    }
    let report = aggregate(&per_seed, &protocol(cfg))?;
    let report_dir = out.join("report");
    fs::create_dir_all(&report_dir).map_err(|e| Error::io(&report_dir, e))?;
    write_json(&report_dir.join("metrics.json"), &report)?;
    let md_path = report_dir.join("report.md");
    fs::write(&md_path, render_markdown(&report, &stats, &dyn_rows)).map_err(|e| Error::io(&md_path, e))?;
    write_dynamics_csv(report_dir.join("label_dynamics.csv"), &cfg.seeds, &dyn_rows)?;
    write_json(&report_dir.join("graph_stats.json"), &stats)?;
    log::info!("report written to {}", report_dir.display());
    Ok(report)
}

/// Runs `stage` for every seed of `cfg` (the report once) under `out`.
pub fn run_stage(stage: Stage, cfg: &Config, out: &Path) -> Result<()> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_config(out, cfg)?;
    let per_seed = |f: &dyn Fn(u64) -> Result<()>| cfg.seeds.iter().try_for_each(|&s| f(s));
    match stage {
        Stage::Generate => per_seed(&|s| stage_generate(cfg, s, out).map(|_| ())),
        Stage::Train => per_seed(&|s| stage_train(cfg, s, out)),
        Stage::Stack => per_seed(&|s| stage_stack(cfg, s, out)),
        Stage::Eval => per_seed(&|s| stage_eval(cfg, s, out).map(|_| ())),
        Stage::Report => stage_report(cfg, out).map(|_| ()),
        Stage::All => {
            per_seed(&|s| {
                stage_generate(cfg, s, out)?;
                stage_train(cfg, s, out)?;
                stage_stack(cfg, s, out)?;
                stage_eval(cfg, s, out).map(|_| ())
            })?;
            stage_report(cfg, out).map(|_| ())
        }
    }
}
