//! Acceptance suite. Runs with a custom harness and prints one line per
//! criterion; exits non-zero if any criterion fails.
//!
//! `cargo test --release --test acceptance`

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use hilomix::config::{Ablation, DataConfig};
use hilomix::dual_gnn::HiLoModel;
use hilomix::ensemble::{assign_folds, pair_features, refit_excluding_fold, BaseKind, EnsembleConfig};
use hilomix::eval::{auc, hits_at_k, mrr, RankingInstance};
use hilomix::freq_decomp::split_views;
use hilomix::graph::{generate_synthetic, graph_stats, StatsView, SyntheticConfig};
use hilomix::numerics::{grad_check, DenseMatrix, SparseAdjacency};
use hilomix::objectives::{infonce_value, schedule, LabelSet};
use hilomix::pipeline::{cf_precision, fit_pipeline, Dataset, Fitted, Scorer, Split};
use hilomix::trainer::{batch_loss, fold_predictions, TrainConfig, TrainContext};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRAD_TOL: f64 = 1e-4;
const GRAD_BUDGET: Duration = Duration::from_secs(10);
const SPLIT_TOL: f64 = 1e-12;
const PARTITION_BUDGET: Duration = Duration::from_secs(60);
const AUC_TOL: f64 = 1e-12;
const INFONCE_TOL: f64 = 1e-9;
/// Mean final-epoch `E_cf` precision measured on the default fixture
/// (seeds 0, 1, 2: 0.58, 0.60, 0.65), minus a 0.1 band.
const CF_PRECISION_PINNED: f64 = 0.61;
const CF_PRECISION_BAND: f64 = 0.1;
const NOISE_BUDGET: Duration = Duration::from_secs(15 * 60);
const BRANCH_MARGIN: f64 = 0.05;
const DIVISION_GAIN: f64 = 0.01;
const DIVISION_REVERSAL: f64 = 0.02;
const FIXTURE_SEEDS: [u64; 3] = [0, 1, 2];
const DENSIFICATION: f64 = 10.0;

enum Verdict {
    Pass(String),
    Warn(String),
    Fail(String),
}

use Verdict::{Fail, Pass, Warn};

fn check(ok: bool, msg: String) -> Verdict {
    if ok {
        Pass(msg)
    } else {
        Fail(msg)
    }
}

// 1. Finite differences against the tape on the full objective.
fn gradient_correctness() -> Verdict {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..10u64 {
        let data = generate_synthetic(&SyntheticConfig {
            n_accounts: 10,
            n_contracts: 2,
            n_users: 5,
            tx_per_account: 4,
            n_assoc_labels: 8,
            seed,
            ..SyntheticConfig::default()
        })
        .unwrap();
        assert_eq!(data.graph.n_nodes(), 12);
        let mut cfg = TrainConfig::default();
        cfg.model.hidden = 6;
        cfg.model.embed = 6;
        let train: Vec<usize> = (0..data.graph.assoc_edges.len()).collect();
        let ctx = TrainContext::new(&data.graph, &train, &cfg).unwrap();
        let mut model = HiLoModel::new(cfg.model.clone(), ctx.x.cols(), seed).unwrap();
        // Mixed supervision: clean, flipped (target inverted, weight μ), remaining.
        let n = ctx.pairs.len();
        let targets: Vec<u8> = (0..n).map(|i| if i % 3 == 1 { 1 - ctx.labels[i] } else { ctx.labels[i] }).collect();
        let weights: Vec<f64> = (0..n).map(|i| [1.0, 0.83, 0.5][i % 3]).collect();
        let frozen = model.clone();
        let err = grad_check(
            &mut model.store,
            |tape, store| Ok(batch_loss(tape, &frozen, store, &ctx, &cfg, &ctx.pairs, &targets, &weights)?.2),
            1e-6,
            None,
            seed,
        )
        .unwrap();
        worst = worst.max(err);
    }
    let took = start.elapsed();
    check(
        worst <= GRAD_TOL && took < GRAD_BUDGET,
        format!("gradient check: max relative error {worst:.2e} over 10 seeds in {:.1} s (≤ {GRAD_TOL:e}, < 10 s)", took.as_secs_f64()),
    )
}

// 2. A_LF + A_HF reproduces A.
fn split_exactness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.gen_range(2..=200);
        let p = rng.gen_range(0.01..0.2);
        let mut edges = Vec::new();
        let mut weights = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.gen_bool(p) {
                    edges.push((i, j));
                    weights.push(rng.gen_range(0.1..3.0));
                }
            }
        }
        let a = SparseAdjacency::from_undirected(n, &edges, &weights).unwrap();
        let s: Vec<f64> = (0..edges.len()).map(|_| rng.gen::<f64>()).collect();
        let v = split_views(&a, &s).unwrap();
        let (lf, hf, full) = (v.low.to_dense(), v.high.to_dense(), a.to_dense());
        for k in 0..full.len() {
            worst = worst.max((lf.data()[k] + hf.data()[k] - full.data()[k]).abs());
        }
    }
    check(worst <= SPLIT_TOL, format!("frequency split: max |A_LF + A_HF − A| = {worst:.1e} on 50 graphs (≤ 1e-12)"))
}

// 3. Partition laws on every epoch of a full run.
fn partition_laws() -> Verdict {
    let start = Instant::now();
    let ds = Dataset::load(&DataConfig::default(), 0).unwrap();
    let split = Split::new(&ds.graph, 0.2, 0).unwrap();
    let cfg = TrainConfig::default();
    let (_, out) = hilomix::pipeline::train_model(&ds, &split, &cfg, 0).unwrap();
    let mut problems = Vec::new();
    for (t, (ep, log)) in out.history.iter().zip(&out.logs).enumerate() {
        let p = &ep.partition;
        let (cl, cf, re) = p.counts();
        if p.assignments.len() != ep.pairs.len() || cl + cf + re != ep.pairs.len() {
            problems.push(format!("epoch {t}: sets do not cover the multiset"));
        }
        let q = p.schedule;
        if q != schedule(t, cfg.epochs) {
            problems.push(format!("epoch {t}: q = {q} off schedule"));
        }
        if t == 0 && (q != 1.0 || cf != 0) {
            problems.push(format!("epoch 0: q = {q}, |E_cf| = {cf}"));
        }
        if t >= 1 && !(0.5..1.0).contains(&q) {
            problems.push(format!("epoch {t}: q = {q} outside [0.5, 1)"));
        }
        if (log.n_clean, log.n_flipped, log.n_remaining) != (cl, cf, re) {
            problems.push(format!("epoch {t}: log counts disagree with partition"));
        }
        for (i, a) in p.assignments.iter().enumerate() {
            let y = ep.labels[i];
            let ok = match a.set {
                LabelSet::Clean => a.target == y && a.weight == 1.0,
                LabelSet::Flipped => a.target != y && a.mu.is_some_and(|m| m > q && a.weight == m),
                LabelSet::Remaining => a.target == y && a.weight == 0.5,
            };
            if !ok {
                problems.push(format!("epoch {t}: pair {i} assignment {a:?} breaks its set's rule"));
                break;
            }
        }
    }
    let took = start.elapsed();
    if took >= PARTITION_BUDGET {
        problems.push(format!("took {:.1} s", took.as_secs_f64()));
    }
    check(
        out.history.len() == 50 && problems.is_empty(),
        format!(
            "partition laws: {} epochs in {:.1} s; q = 1 at t = 0 and in [0.5, 1) after{}",
            out.history.len(),
            took.as_secs_f64(),
            if problems.is_empty() { String::new() } else { format!("; {}", problems.join("; ")) }
        ),
    )
}

fn brute_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                den += 1.0;
                num += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

/// Sorts every candidate and averages the 1-based positions sharing the
/// positive's score.
fn brute_rank(t: &RankingInstance) -> f64 {
    let mut all: Vec<f64> = t.negatives.clone();
    all.push(t.positive);
    all.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let positions: Vec<f64> = all
        .iter()
        .enumerate()
        .filter(|(_, &s)| s == t.positive)
        .map(|(i, _)| (i + 1) as f64)
        .collect();
    positions.iter().sum::<f64>() / positions.len() as f64
}

// 4. Metrics against brute force.
fn metric_oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_auc = 0.0f64;
    let mut mismatches = 0;
    for _ in 0..100 {
        // Coarse scores force ties.
        let n = rng.gen_range(2..60);
        let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..8)) / 8.0).collect();
        worst_auc = worst_auc.max((auc(&scores, &labels).unwrap() - brute_auc(&scores, &labels)).abs());

        let tasks: Vec<RankingInstance> = (0..rng.gen_range(1..30))
            .map(|_| RankingInstance {
                positive: f64::from(rng.gen_range(0..6)) / 6.0,
                negatives: (0..rng.gen_range(1..60)).map(|_| f64::from(rng.gen_range(0..6)) / 6.0).collect(),
            })
            .collect();
        let ranks: Vec<f64> = tasks.iter().map(brute_rank).collect();
        let oracle_mrr = ranks.iter().map(|r| 1.0 / r).sum::<f64>() / ranks.len() as f64;
        if mrr(&tasks) != oracle_mrr {
            mismatches += 1;
        }
        for k in [3, 5, 10] {
            let oracle = ranks.iter().filter(|&&r| r <= k as f64).count() as f64 / ranks.len() as f64;
            if hits_at_k(&tasks, k) != oracle {
                mismatches += 1;
            }
        }
    }
    check(
        worst_auc <= AUC_TOL && mismatches == 0,
        format!("metric oracles: max AUC deviation {worst_auc:.1e} (≤ 1e-12), {mismatches} MRR/Hits mismatches on 100 instances"),
    )
}

// 5. Identical embeddings give ln N.
fn infonce_analytic() -> Verdict {
    let mut worst = 0.0f64;
    for n in [2usize, 8, 128] {
        let z = DenseMatrix::filled(n, 16, 0.3);
        worst = worst.max((infonce_value(&z, &z, 0.5).unwrap() - (n as f64).ln()).abs());
    }
    check(worst <= INFONCE_TOL, format!("InfoNCE: max |L − ln N| = {worst:.1e} for N = 2, 8, 128 (≤ 1e-9)"))
}

struct SeedRun {
    fitted: Fitted,
    ds: Dataset,
    split: Split,
    train_cfg: TrainConfig,
    ens_cfg: EnsembleConfig,
    stacked_auc: f64,
    branch_auc: [f64; 2],
    no_division_auc: f64,
}

struct FixtureRuns {
    seeds: Vec<SeedRun>,
    took: Duration,
}

fn test_auc(ds: &Dataset, split: &Split, fitted: &Fitted) -> (f64, [f64; 2]) {
    let pairs = ds.pairs(&split.test);
    let labels = ds.eval_labels(&split.test);
    let scorer = Scorer::new(&fitted.outcome.model, &fitted.ctx, &fitted.stack).unwrap();
    let base = scorer.base_predictions(&pairs).unwrap();
    let col = |k: BaseKind| (0..pairs.len()).map(|r| base.get(r, k.column())).collect::<Vec<_>>();
    let stacked = fitted.stack.meta.predict_proba(&base).unwrap();
    (
        auc(&stacked, &labels).unwrap(),
        [auc(&col(BaseKind::HeadLf), &labels).unwrap(), auc(&col(BaseKind::HeadHf), &labels).unwrap()],
    )
}

/// Default fixture, three seeds: the full pipeline and its no-division
/// twin. Shared by criteria 6 to 8.
fn fixture_runs() -> &'static FixtureRuns {
    static RUNS: OnceLock<FixtureRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let start = Instant::now();
        let data = DataConfig::default();
        assert_eq!(data.synthetic.n_accounts, 2000);
        assert_eq!(data.synthetic.n_contracts, 8);
        assert_eq!(data.synthetic.n_assoc_labels, 500);
        assert_eq!(data.synthetic.noise_rate, 0.2);
        let train_cfg = TrainConfig::default();
        assert_eq!((train_cfg.epochs, train_cfg.lambda, train_cfg.tau, train_cfg.lr), (50, 2.0, 0.5, 0.003));
        assert_eq!(train_cfg.model.alpha, 0.5);
        let seeds = FIXTURE_SEEDS
            .iter()
            .map(|&seed| {
                let ds = Dataset::load(&data, seed).unwrap();
                let split = Split::new(&ds.graph, data.test_fraction, seed).unwrap();
                let ens_cfg = EnsembleConfig {
                    seed,
                    ..EnsembleConfig::default()
                };
                let fitted = fit_pipeline(&ds, &split, &train_cfg, &ens_cfg, seed).unwrap();
                let (stacked_auc, branch_auc) = test_auc(&ds, &split, &fitted);
                let plain = fit_pipeline(&ds, &split, &Ablation::LabelDivision.apply(&train_cfg), &ens_cfg, seed).unwrap();
                let (no_division_auc, _) = test_auc(&ds, &split, &plain);
                SeedRun {
                    fitted,
                    ds,
                    split,
                    train_cfg: train_cfg.clone(),
                    ens_cfg,
                    stacked_auc,
                    branch_auc,
                    no_division_auc,
                }
            })
            .collect();
        FixtureRuns {
            seeds,
            took: start.elapsed(),
        }
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fmt(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join("/")
}

// 6. E_cf grows late in training and is mostly true flips.
fn noise_recovery() -> Verdict {
    let runs = fixture_runs();
    let mut early = Vec::new();
    let mut late = Vec::new();
    let mut precision = Vec::new();
    for r in &runs.seeds {
        let cf: Vec<f64> = r.fitted.outcome.logs.iter().map(|l| l.n_flipped as f64).collect();
        early.push(mean(&cf[20..=30]));
        late.push(mean(&cf[40..50]));
        let truth = r.ds.truth.as_ref().unwrap();
        precision.push(cf_precision(r.fitted.outcome.final_partition().unwrap(), truth).unwrap_or(0.0));
    }
    let floor = CF_PRECISION_PINNED - CF_PRECISION_BAND;
    let rises = mean(&late) > mean(&early);
    let precise = mean(&precision) >= floor;
    check(
        rises && precise && runs.took < NOISE_BUDGET,
        format!(
            "noise recovery: mean |E_cf| epochs 20–30 {:.1} → 40–49 {:.1} (per seed {} → {}); final precision {:.3} ({}) ≥ {floor:.2}; fixture runs {:.0} s",
            mean(&early),
            mean(&late),
            fmt(&early),
            fmt(&late),
            mean(&precision),
            fmt(&precision),
            runs.took.as_secs_f64()
        ),
    )
}

// 7. Stacking is not worse than a lone branch, and label division helps.
fn ensemble_sanity() -> Verdict {
    let runs = fixture_runs();
    let stacked: Vec<f64> = runs.seeds.iter().map(|r| r.stacked_auc).collect();
    let best: Vec<f64> = runs.seeds.iter().map(|r| r.branch_auc[0].max(r.branch_auc[1])).collect();
    let plain: Vec<f64> = runs.seeds.iter().map(|r| r.no_division_auc).collect();
    let branch_ok = stacked.iter().zip(&best).all(|(s, b)| *s >= b - BRANCH_MARGIN);
    let gain = mean(&stacked) - mean(&plain);
    let msg = format!(
        "ensemble: stacked AUC {} vs best branch {} (margin {BRANCH_MARGIN}); division gain {gain:+.4} (stacked {:.4} vs no division {:.4}, per seed {}; pass ≥ +{DIVISION_GAIN}, fail < −{DIVISION_REVERSAL})",
        fmt(&stacked),
        fmt(&best),
        mean(&stacked),
        mean(&plain),
        fmt(&plain)
    );
    if !branch_ok || gain < -DIVISION_REVERSAL {
        Fail(msg)
    } else if gain < DIVISION_GAIN {
        Warn(msg)
    } else {
        Pass(msg)
    }
}

// 8. Refitting without a row's fold reproduces its stored prediction.
fn no_leakage() -> Verdict {
    let r = &fixture_runs().seeds[0];
    let f = &r.fitted;
    let folds = assign_folds(&f.targets.targets, &r.ens_cfg).unwrap();
    assert_eq!(folds, f.oof.folds);
    let emb = f.outcome.model.embed(&f.ctx.x, &f.ctx.graph).unwrap();
    let pair = pair_features(&emb, &f.ctx.x, &f.targets.pairs).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut rows = HashSet::new();
    while rows.len() < 5 {
        rows.insert(rng.gen_range(0..folds.len()));
    }
    let mut rows: Vec<usize> = rows.into_iter().collect();
    rows.sort_unstable();
    let mut mismatches = Vec::new();
    for &row in &rows {
        let fold = folds[row];
        let x = pair.select_rows(&[row]).unwrap();
        for kind in BaseKind::CLASSICAL {
            let m = refit_excluding_fold(&pair, &f.targets.targets, &folds, kind, fold, &r.ens_cfg).unwrap();
            let v = m.predict_proba(&x).unwrap()[0];
            if v.to_bits() != f.oof.predictions.get(row, kind.column()).to_bits() {
                mismatches.push(format!("row {row} {}", kind.name()));
            }
        }
        let (held, probs) = fold_predictions(&r.ds.graph, &r.split.train, &folds, fold, &r.train_cfg, FIXTURE_SEEDS[0]).unwrap();
        let i = held.iter().position(|&h| h == row).unwrap();
        for (c, kind) in [BaseKind::HeadLf, BaseKind::HeadHf].into_iter().enumerate() {
            if probs.get(i, c).to_bits() != f.oof.predictions.get(row, kind.column()).to_bits() {
                mismatches.push(format!("row {row} {}", kind.name()));
            }
        }
    }
    check(
        mismatches.is_empty(),
        format!(
            "no leakage: rows {rows:?} reproduced bit for bit across all 5 base models{}",
            if mismatches.is_empty() { String::new() } else { format!("; mismatches: {}", mismatches.join(", ")) }
        ),
    )
}

fn metrics_files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n == "metrics.json") {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

// 9. Two `all` runs write identical metrics.
fn determinism() -> Verdict {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml");
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = tmp.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_hilomix"))
            .args(["all", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .env("HILOMIX_LOG", "error")
            .status()
            .unwrap();
        assert!(status.success(), "hilomix all exited with {status}");
        out
    };
    let (a, b) = (run("a"), run("b"));
    let files = metrics_files(&a);
    let same = !files.is_empty()
        && files == metrics_files(&b)
        && files.iter().all(|f| std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap());
    check(same, format!("determinism: {} metrics.json files byte-identical across two `all` runs", files.len()))
}

// 10. Transactions densify the graph.
fn densification() -> Verdict {
    let mut ratios = Vec::new();
    for seed in FIXTURE_SEEDS {
        let data = generate_synthetic(&SyntheticConfig {
            seed,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let assoc = graph_stats(&data.graph, StatsView::AssocOnly).average_degree;
        let full = graph_stats(&data.graph, StatsView::Full).average_degree;
        ratios.push(full / assoc);
    }
    check(
        ratios.iter().all(|&r| r >= DENSIFICATION),
        format!("densification: full / assoc-only average degree {} (≥ {DENSIFICATION})", fmt(&ratios)),
    )
}

fn main() {
    let criteria: [(u8, fn() -> Verdict); 10] = [
        (1, gradient_correctness),
        (2, split_exactness),
        (3, partition_laws),
        (4, metric_oracles),
        (5, infonce_analytic),
        (6, noise_recovery),
        (7, ensemble_sanity),
        (8, no_leakage),
        (9, determinism),
        (10, densification),
    ];
    let mut failed = 0;
    for (id, f) in criteria {
        let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Fail(format!("panicked: {msg}"))
        });
        match verdict {
            Pass(m) => println!("criterion {id:>2} PASS  {m}"),
            Warn(m) => println!("criterion {id:>2} WARN  {m}"),
            Fail(m) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {m}");
            }
        }
    }
    println!("{} of 10 criteria passed or warned", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
