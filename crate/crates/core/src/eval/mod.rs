//! Metrics, ranking protocol and report generation.

pub mod metrics;
pub mod ranking;
pub mod report;

pub use metrics::*;
pub use ranking::{build_ranking_tasks, score_tasks, RankingTask};
pub use report::{
    aggregate, mean_std, render_markdown, write_dynamics_csv, AggregateRow, DynamicsRow, GraphStatsPair, MeanStd,
    MetricRow, Report, SeedMetrics,
};
