//! Per-seed metric records, their aggregation over seeds, and the markdown
//! report.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::metrics::MetricSet;
use crate::graph::GraphStats;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub name: String,
    pub metrics: MetricSet,
}

/// Everything `eval` measures for one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub n_test: usize,
    pub n_ranking_tasks: usize,
    pub methods: Vec<MetricRow>,
    pub ablations: Vec<MetricRow>,
}

/// Label-set sizes of one epoch, with the share of `E_cf` that is truly
/// mislabeled when planted truth is known.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsRow {
    pub epoch: usize,
    pub n_clean: usize,
    pub n_flipped: usize,
    pub n_remaining: usize,
    pub clean_fraction: f64,
    pub cf_precision: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphStatsPair {
    pub assoc_only: GraphStats,
    pub full: GraphStats,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample standard deviation; the deviation of a single value is 0.
pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    MeanStd { mean, std }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub name: String,
    /// In [`MetricSet::NAMES`] order.
    pub summary: Vec<MeanStd>,
    pub per_seed: Vec<MetricSet>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub seeds: Vec<u64>,
    pub protocol: String,
    pub methods: Vec<AggregateRow>,
    pub ablations: Vec<AggregateRow>,
}

fn aggregate_rows(seeds: &[SeedMetrics], pick: impl Fn(&SeedMetrics) -> &[MetricRow]) -> Result<Vec<AggregateRow>> {
    let first = pick(&seeds[0]);
    first
        .iter()
        .map(|row| {
            let per_seed = seeds
                .iter()
                .map(|s| {
                    pick(s)
                        .iter()
                        .find(|r| r.name == row.name)
                        .map(|r| r.metrics)
                        .ok_or_else(|| Error::Validation(format!("seed {} has no row `{}`", s.seed, row.name)))
                })
                .collect::<Result<Vec<_>>>()?;
            let summary = (0..MetricSet::NAMES.len())
                .map(|m| mean_std(&per_seed.iter().map(|v| v.values()[m]).collect::<Vec<_>>()))
                .collect();
            Ok(AggregateRow {
                name: row.name.clone(),
                summary,
                per_seed,
            })
        })
        .collect()
}

/// Aggregates over exactly the seeds given, in order.
pub fn aggregate(per_seed: &[SeedMetrics], protocol: &str) -> Result<Report> {
    if per_seed.is_empty() {
        return Err(Error::Validation("no seeds to aggregate".into()));
    }
    Ok(Report {
        seeds: per_seed.iter().map(|s| s.seed).collect(),
        protocol: protocol.to_string(),
        methods: aggregate_rows(per_seed, |s| &s.methods)?,
        ablations: aggregate_rows(per_seed, |s| &s.ablations)?,
    })
}

fn cell(m: &MeanStd) -> String {
    format!("{:.4} ± {:.4}", m.mean, m.std)
}

fn table(out: &mut String, head: &str, rows: &[AggregateRow], cols: &[usize]) {
    let names: Vec<&str> = cols.iter().map(|&c| MetricSet::NAMES[c]).collect();
    let _ = writeln!(out, "| {head} | {} |", names.join(" | "));
    let _ = writeln!(out, "|---|{}", "---|".repeat(cols.len()));
    for r in rows {
        let cells: Vec<String> = cols.iter().map(|&c| cell(&r.summary[c])).collect();
        let _ = writeln!(out, "| {} | {} |", r.name, cells.join(" | "));
    }
    out.push('\n');
}

/// Markdown with the method table, the ablation table, structural statistics
/// and a label-dynamics summary. `stats` and `dynamics` are per seed, in the
/// report's seed order.
pub fn render_markdown(report: &Report, stats: &[GraphStatsPair], dynamics: &[Vec<DynamicsRow>]) -> String {
    let mut out = String::new();
    let seeds: Vec<String> = report.seeds.iter().map(u64::to_string).collect();
    let _ = writeln!(out, "# HiLoMix report\n");
    let _ = writeln!(out, "Seeds: {} (mean ± sample std over seeds).\n", seeds.join(", "));
    let _ = writeln!(out, "Protocol: {}\n", report.protocol);

    let _ = writeln!(out, "## Association performance\n");
    table(&mut out, "Method", &report.methods, &[0, 1, 2, 3, 4, 5]);

    if !report.ablations.is_empty() {
        let _ = writeln!(out, "## Ablations\n");
        let mut rows: Vec<AggregateRow> = report.methods.iter().filter(|r| r.name == "HiLoMix").cloned().collect();
        rows.extend(report.ablations.iter().cloned());
        table(&mut out, "Variant", &rows, &[0, 1, 2]);
    }

    if !stats.is_empty() {
        let _ = writeln!(out, "## Structural statistics\n");
        let _ = writeln!(out, "| View | Nodes | Edges | Avg degree | Avg clustering | Density |");
        let _ = writeln!(out, "|---|---|---|---|---|---|");
        for (name, pick) in [
            ("Association only", (|s: &GraphStatsPair| s.assoc_only) as fn(&GraphStatsPair) -> GraphStats),
            ("Full graph", |s: &GraphStatsPair| s.full),
        ] {
            let v: Vec<GraphStats> = stats.iter().map(pick).collect();
            let m = |f: fn(&GraphStats) -> f64| mean_std(&v.iter().map(f).collect::<Vec<_>>()).mean;
            let _ = writeln!(
                out,
                "| {name} | {:.0} | {:.0} | {:.4} | {:.4} | {:.6} |",
                m(|s| s.n_nodes as f64),
                m(|s| s.n_edges as f64),
                m(|s| s.average_degree),
                m(|s| s.average_clustering),
                m(|s| s.density)
            );
        }
        out.push('\n');
    }

    if !dynamics.is_empty() {
        let _ = writeln!(out, "## Label dynamics\n");
        let _ = writeln!(out, "Full series per epoch in `label_dynamics.csv`.\n");
        let _ = writeln!(out, "| Seed | Epochs | Final clean | Final flipped | Final remaining | Final E_cf precision |");
        let _ = writeln!(out, "|---|---|---|---|---|---|");
        for (seed, rows) in report.seeds.iter().zip(dynamics) {
            if let Some(last) = rows.last() {
                let prec = last.cf_precision.map_or("n/a".to_string(), |p| format!("{p:.4}"));
                let _ = writeln!(
                    out,
                    "| {seed} | {} | {} | {} | {} | {prec} |",
                    rows.len(),
                    last.n_clean,
                    last.n_flipped,
                    last.n_remaining
                );
            }
        }
        out.push('\n');
    }
    out
}

/// `seed,epoch,n_clean,n_flipped,n_remaining,clean_fraction,cf_precision`.
pub fn write_dynamics_csv(path: impl AsRef<Path>, seeds: &[u64], dynamics: &[Vec<DynamicsRow>]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["seed", "epoch", "n_clean", "n_flipped", "n_remaining", "clean_fraction", "cf_precision"])?;
    for (seed, rows) in seeds.iter().zip(dynamics) {
        for r in rows {
            w.write_record([
                seed.to_string(),
                r.epoch.to_string(),
                r.n_clean.to_string(),
                r.n_flipped.to_string(),
                r.n_remaining.to_string(),
                format!("{:?}", r.clean_fraction),
                r.cf_precision.map(|p| format!("{p:?}")).unwrap_or_default(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
