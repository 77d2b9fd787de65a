//! The training loop.
//!
//! Every epoch: draw negatives to balance the labeled multiset, score the
//! whole multiset with frozen parameters, partition it, then take one Adam
//! step per shuffled batch of the total loss. Each step recomputes the
//! encoder, the smoothness scores, both views and both propagations on a
//! fresh tape, so the scorer receives gradients through the views.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dual_gnn::{Branch, HiLoModel, ModelConfig};
use crate::error::{Error, Result};
use crate::freq_decomp::PropagationGraph;
use crate::graph::Hamig;
use crate::numerics::{AdamState, DenseMatrix, Tape};
use crate::objectives::{
    contrastive_loss, mutual_loss, partition_labels, supervision_loss_on_tape, total_loss_on_tape, LabelPartition,
    MutualMode,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub anchor_batch: usize,
    pub lr: f64,
    pub tau: f64,
    pub lambda: f64,
    pub grad_clip: f64,
    /// Sampled negatives are added until negatives reach this multiple of
    /// positives.
    pub negative_ratio: f64,
    pub mutual_mode: MutualMode,
    /// Clean / flipped / remaining partition; when off every label is clean.
    pub label_division: bool,
    pub freeze_scorer: bool,
    /// Propagate over transaction edges.
    pub tx_edges_in_propagation: bool,
    /// Propagate over positively labeled training associations. Off by
    /// default: observed positives in the graph let the model fit noisy
    /// labels through their own edges.
    pub assoc_edges_in_propagation: bool,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 128,
            anchor_batch: 128,
            lr: 0.003,
            tau: 0.5,
            lambda: 2.0,
            grad_clip: 5.0,
            negative_ratio: 1.0,
            mutual_mode: MutualMode::ClassSelector,
            label_division: true,
            freeze_scorer: false,
            tx_edges_in_propagation: true,
            assoc_edges_in_propagation: false,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.anchor_batch < 2 {
            return Err(Error::Config("anchor_batch must be at least 2".into()));
        }
        if !(self.lr > 0.0 && self.tau > 0.0 && self.grad_clip > 0.0) {
            return Err(Error::Config("lr, tau and grad_clip must be positive".into()));
        }
        if !(self.lambda >= 0.0 && self.negative_ratio >= 0.0) {
            return Err(Error::Config("lambda and negative_ratio must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub n_clean: usize,
    pub n_flipped: usize,
    pub n_remaining: usize,
    pub clean_fraction: f64,
    pub l_con: f64,
    pub l_sup: f64,
    pub total: f64,
    pub clamped: usize,
    pub seconds: f64,
}

impl EpochLog {
    pub fn without_timing(&self) -> Self {
        Self {
            seconds: 0.0,
            ..self.clone()
        }
    }
}

/// Labeled multiset of one epoch with its partition.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochPartition {
    pub pairs: Vec<(usize, usize)>,
    pub labels: Vec<u8>,
    /// Leading entries that are labeled training pairs; the rest are sampled
    /// negatives.
    pub n_labeled: usize,
    pub l_mul: Vec<f64>,
    pub partition: LabelPartition,
}

/// Everything the loop needs that stays fixed across epochs.
#[derive(Clone, Debug)]
pub struct TrainContext {
    pub x: DenseMatrix,
    pub graph: PropagationGraph,
    pub n_accounts: usize,
    pub pairs: Vec<(usize, usize)>,
    pub labels: Vec<u8>,
    /// Pairs never drawn as negatives.
    pub excluded: HashSet<(usize, usize)>,
}

impl TrainContext {
    /// Training pairs are `train` indices into `g.assoc_edges`. Every
    /// labeled pair of `g` (train or not) is excluded from negative sampling.
    pub fn new(g: &Hamig, train: &[usize], cfg: &TrainConfig) -> Result<Self> {
        let mut pairs = Vec::with_capacity(train.len());
        let mut labels = Vec::with_capacity(train.len());
        for &i in train {
            let e = g.assoc_edges.get(i).ok_or(Error::Index {
                op: "TrainContext::new",
                index: i,
                len: g.assoc_edges.len(),
            })?;
            pairs.push(e.pair());
            labels.push(e.label);
        }
        let positives: Vec<(usize, usize)> = if cfg.assoc_edges_in_propagation {
            pairs
                .iter()
                .zip(&labels)
                .filter(|(_, &y)| y == 1)
                .map(|(&p, _)| p)
                .collect()
        } else {
            Vec::new()
        };
        let graph = PropagationGraph::from_hamig(g, cfg.tx_edges_in_propagation, &positives)?;
        Ok(Self {
            x: g.node_features(),
            graph,
            n_accounts: g.n_accounts(),
            pairs,
            labels,
            excluded: g.labeled_pairs(),
        })
    }
}

/// `k` distinct account pairs outside `g`'s labeled pairs, uniformly drawn.
pub fn sample_negatives(g: &Hamig, k: usize, rng: &mut impl Rng) -> Result<Vec<(usize, usize)>> {
    sample_pairs(g.n_accounts(), &g.labeled_pairs(), k, rng)
}

pub(crate) fn sample_pairs(
    n_accounts: usize,
    excluded: &HashSet<(usize, usize)>,
    k: usize,
    rng: &mut impl Rng,
) -> Result<Vec<(usize, usize)>> {
    if k == 0 {
        return Ok(Vec::new());
    }
    let total = n_accounts * n_accounts.saturating_sub(1) / 2;
    let blocked = excluded.iter().filter(|(a, b)| a < b && *b < n_accounts).count();
    let available = total - blocked;
    if k > available {
        return Err(Error::Config(format!(
            "{k} negatives requested but only {available} unlabeled account pairs exist"
        )));
    }
    let mut seen = HashSet::with_capacity(k);
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        let a = rng.gen_range(0..n_accounts);
        let b = rng.gen_range(0..n_accounts);
        if a == b {
            continue;
        }
        let p = (a.min(b), a.max(b));
        if !excluded.contains(&p) && seen.insert(p) {
            out.push(p);
        }
    }
    Ok(out)
}

/// Model, optimizer and RNG carried from epoch to epoch.
pub struct TrainerState {
    pub model: HiLoModel,
    pub adam: AdamState,
    pub rng: ChaCha8Rng,
    pub epoch: usize,
}

impl TrainerState {
    pub fn new(ctx: &TrainContext, cfg: &TrainConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let model = HiLoModel::new(cfg.model.clone(), ctx.x.cols(), seed)?;
        Ok(Self::from_model(model, cfg, seed))
    }

    pub fn from_model(model: HiLoModel, cfg: &TrainConfig, seed: u64) -> Self {
        let adam = AdamState::new(&model.store, cfg.lr);
        Self {
            model,
            adam,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_7a11),
            epoch: 0,
        }
    }
}

/// Class probabilities of both heads for `pairs` under the current parameters.
pub fn predict_both(model: &HiLoModel, ctx: &TrainContext, pairs: &[(usize, usize)]) -> Result<(DenseMatrix, DenseMatrix)> {
    let emb = model.embed(&ctx.x, &ctx.graph)?;
    Ok((
        model.predict_pairs(&emb, Branch::Low, pairs)?,
        model.predict_pairs(&emb, Branch::High, pairs)?,
    ))
}

fn epoch_multiset(ctx: &TrainContext, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<(Vec<(usize, usize)>, Vec<u8>)> {
    let pos = ctx.labels.iter().filter(|&&y| y == 1).count();
    let neg = ctx.labels.len() - pos;
    let want = ((cfg.negative_ratio * pos as f64).round() as usize).saturating_sub(neg);
    let extra = sample_pairs(ctx.n_accounts, &ctx.excluded, want, rng)?;
    let mut pairs = ctx.pairs.clone();
    let mut labels = ctx.labels.clone();
    labels.extend(std::iter::repeat(0).take(extra.len()));
    pairs.extend(extra);
    Ok((pairs, labels))
}

/// Partition the epoch's multiset under frozen parameters.
pub fn partition_epoch(
    state: &TrainerState,
    ctx: &TrainContext,
    cfg: &TrainConfig,
    pairs: Vec<(usize, usize)>,
    labels: Vec<u8>,
) -> Result<(EpochPartition, usize)> {
    let (p_lf, p_hf) = predict_both(&state.model, ctx, &pairs)?;
    let m = mutual_loss(&p_lf, &p_hf, &labels, cfg.mutual_mode)?;
    let partition = if cfg.label_division {
        partition_labels(&m.values, &p_lf, &p_hf, &labels, state.epoch, cfg.epochs.max(1))?
    } else {
        LabelPartition::all_clean(&labels)
    };
    Ok((
        EpochPartition {
            n_labeled: ctx.pairs.len(),
            pairs,
            labels,
            l_mul: m.values,
            partition,
        },
        m.clamped,
    ))
}

/// Anchors: distinct endpoints of the batch pairs in order of appearance.
fn batch_anchors(pairs: &[(usize, usize)], limit: usize) -> Vec<usize> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for &(a, b) in pairs {
        for v in [a, b] {
            if out.len() < limit && seen.insert(v) {
                out.push(v);
            }
        }
    }
    out
}

/// Losses of one batch as tape variables: `(l_con, l_sup, total)`.
pub fn batch_loss(
    tape: &mut Tape,
    model: &HiLoModel,
    store: &crate::numerics::ParamStore,
    ctx: &TrainContext,
    cfg: &TrainConfig,
    pairs: &[(usize, usize)],
    targets: &[u8],
    weights: &[f64],
) -> Result<(crate::numerics::Var, crate::numerics::Var, crate::numerics::Var)> {
    let x = tape.constant(ctx.x.clone());
    let f = model.forward(tape, store, x, &ctx.graph)?;
    let lp_lf = model.head_lf.log_probs(tape, store, f.h_lf, pairs)?;
    let lp_hf = model.head_hf.log_probs(tape, store, f.h_hf, pairs)?;
    let l_sup = supervision_loss_on_tape(tape, lp_lf, lp_hf, targets, weights)?;
    let anchors = batch_anchors(pairs, cfg.anchor_batch);
    let l_con = contrastive_loss(tape, f.h_lf, f.h_hf, &anchors, cfg.tau)?;
    let total = total_loss_on_tape(tape, l_con, l_sup, cfg.lambda)?;
    Ok((l_con, l_sup, total))
}

/// One epoch: sample, partition, then one Adam step per batch.
pub fn train_epoch(state: &mut TrainerState, ctx: &TrainContext, cfg: &TrainConfig) -> Result<(EpochLog, EpochPartition)> {
    let start = Instant::now();
    let (pairs, labels) = epoch_multiset(ctx, cfg, &mut state.rng)?;
    let (ep, clamped) = partition_epoch(state, ctx, cfg, pairs, labels)?;
    let targets = ep.partition.targets();
    let weights = ep.partition.weights();

    let mut order: Vec<usize> = (0..ep.pairs.len()).collect();
    order.shuffle(&mut state.rng);
    let (mut sum_con, mut sum_sup, mut sum_total, mut n_batches) = (0.0, 0.0, 0.0, 0usize);
    let scorer_ids = [state.model.scorer.weight, state.model.scorer.bias];
    for chunk in order.chunks(cfg.batch_size) {
        let bp: Vec<_> = chunk.iter().map(|&i| ep.pairs[i]).collect();
        let bt: Vec<_> = chunk.iter().map(|&i| targets[i]).collect();
        let bw: Vec<_> = chunk.iter().map(|&i| weights[i]).collect();
        let mut tape = Tape::new();
        let (l_con, l_sup, total) = batch_loss(
            &mut tape,
            &state.model,
            &state.model.store,
            ctx,
            cfg,
            &bp,
            &bt,
            &bw,
        )?;
        let (c, s, t) = (
            tape.scalar_value(l_con)?,
            tape.scalar_value(l_sup)?,
            tape.scalar_value(total)?,
        );
        if !t.is_finite() {
            log::error!(
                "non-finite loss at epoch {} batch {n_batches}: l_con={c} l_sup={s} pairs={:?}",
                state.epoch,
                &bp[..bp.len().min(8)]
            );
            return Err(Error::NonFinite(format!(
                "loss at epoch {} batch {n_batches}: l_con={c}, l_sup={s}",
                state.epoch
            )));
        }
        tape.backward(total, &mut state.model.store)?;
        if cfg.freeze_scorer {
            for id in scorer_ids {
                state.model.store.get_mut(id).zero_grad();
            }
        }
        state.model.store.clip_grad_norm(cfg.grad_clip);
        state.adam.step(&mut state.model.store);
        sum_con += c;
        sum_sup += s;
        sum_total += t;
        n_batches += 1;
    }
    let nb = n_batches.max(1) as f64;
    let (n_clean, n_flipped, n_remaining) = ep.partition.counts();
    let log = EpochLog {
        epoch: state.epoch,
        n_clean,
        n_flipped,
        n_remaining,
        clean_fraction: n_clean as f64 / ep.pairs.len().max(1) as f64,
        l_con: sum_con / nb,
        l_sup: sum_sup / nb,
        total: sum_total / nb,
        clamped,
        seconds: start.elapsed().as_secs_f64(),
    };
    state.epoch += 1;
    Ok((log, ep))
}

pub struct TrainOutcome {
    pub model: HiLoModel,
    pub logs: Vec<EpochLog>,
    pub history: Vec<EpochPartition>,
}

impl TrainOutcome {
    /// Partition of the last epoch, if any epoch ran.
    pub fn final_partition(&self) -> Option<&EpochPartition> {
        self.history.last()
    }
}

pub fn run_training(ctx: &TrainContext, cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    let mut state = TrainerState::new(ctx, cfg, seed)?;
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let (log, ep) = train_epoch(&mut state, ctx, cfg)?;
        log::info!(
            "epoch {:>3}  cl={:<5} cf={:<5} re={:<5} l_con={:.4} l_sup={:.4} total={:.4}",
            log.epoch,
            log.n_clean,
            log.n_flipped,
            log.n_remaining,
            log.l_con,
            log.l_sup,
            log.total
        );
        logs.push(log);
        history.push(ep);
    }
    Ok(TrainOutcome {
        model: state.model,
        logs,
        history,
    })
}

/// Class-1 probability of the low and high heads, one row per pair.
pub fn head_probabilities(model: &HiLoModel, ctx: &TrainContext, pairs: &[(usize, usize)]) -> Result<DenseMatrix> {
    let (p_lf, p_hf) = predict_both(model, ctx, pairs)?;
    let data = (0..pairs.len()).flat_map(|r| [p_lf.get(r, 1), p_hf.get(r, 1)]).collect();
    DenseMatrix::from_vec(pairs.len(), 2, data)
}

/// Seed of the GNN run that leaves out fold `fold`.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed ^ ((fold as u64 + 1) << 32)
}

/// Trains on every fold of `train` but `fold` and scores the held-out
/// pairs. Returns the held-out positions within `train` and their `n×2`
/// head probabilities.
pub fn fold_predictions(
    g: &Hamig,
    train: &[usize],
    folds: &[usize],
    fold: usize,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Vec<usize>, DenseMatrix)> {
    if folds.len() != train.len() {
        return Err(Error::dim(
            "fold_predictions",
            format!("{} fold ids for {} training pairs", folds.len(), train.len()),
        ));
    }
    let (fit, held): (Vec<usize>, Vec<usize>) = (0..train.len()).partition(|&r| folds[r] != fold);
    let fit_idx: Vec<usize> = fit.iter().map(|&r| train[r]).collect();
    let ctx = TrainContext::new(g, &fit_idx, cfg)?;
    let out = run_training(&ctx, cfg, fold_seed(seed, fold))?;
    let pairs: Vec<(usize, usize)> = held.iter().map(|&r| g.assoc_edges[train[r]].pair()).collect();
    let probs = head_probabilities(&out.model, &ctx, &pairs)?;
    Ok((held, probs))
}

/// Out-of-fold head probabilities for every pair of `train`: row `r` comes
/// from a run that never saw fold `folds[r]`.
pub fn out_of_fold_predictions(
    g: &Hamig,
    train: &[usize],
    folds: &[usize],
    k: usize,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<DenseMatrix> {
    let mut out = DenseMatrix::zeros(train.len(), 2);
    for fold in 0..k {
        if !folds.contains(&fold) {
            continue;
        }
        log::info!("out-of-fold GNN run {}/{k}", fold + 1);
        let (held, probs) = fold_predictions(g, train, folds, fold, cfg, seed)?;
        for (i, &r) in held.iter().enumerate() {
            out.row_mut(r).copy_from_slice(probs.row(i));
        }
    }
    Ok(out)
}

/// Appends one JSON object per line.
pub fn write_epoch_logs(path: impl AsRef<Path>, logs: &[EpochLog]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for l in logs {
        serde_json::to_writer(&mut w, l)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
