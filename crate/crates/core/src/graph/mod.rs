//! The heterogeneous mixer interaction graph: data model, ingestion,
//! features, synthetic generation, snapshots and structural statistics.

mod features;
mod hamig;
mod ingest;
mod snapshot;
mod stats;
mod synthetic;

pub use features::{extract_features, feature_columns, standardize, AccountFeatures, FeatureManifest};
pub use hamig::{AssocEdge, Hamig};
pub use ingest::{
    hamig_from_log, ingest_associations, ingest_hamig, ingest_transactions, write_associations,
    write_transactions, Direction, TransactionLog, TxEvent,
};
pub use snapshot::{read_json, read_snapshot, write_json, write_snapshot};
pub use stats::{graph_stats, stats_from_edges, GraphStats, StatsView};
pub use synthetic::{
    account_address, contract_name, generate_synthetic, NoiseMode, SyntheticConfig, SyntheticDataset,
    SyntheticTruth, TruthLabel,
};
