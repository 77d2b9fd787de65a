//! On-disk graph snapshot.
//!
//! ```text
//! nodes.csv       node_id,kind,name
//! edges_at.csv    account,contract        (global node ids)
//! edges_aa.csv    a,b,label               (global node ids)
//! features.bin    raw account features, little-endian f64, row-major
//! features.json   shape and column names
//! truth.json      planted truth, synthetic runs only
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::features::{AccountFeatures, FeatureManifest};
use crate::graph::hamig::{AssocEdge, Hamig};
use crate::graph::synthetic::SyntheticTruth;
use crate::numerics::DenseMatrix;

#[derive(Debug, Serialize, Deserialize)]
struct NodeRow {
    node_id: usize,
    kind: String,
    name: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct TxEdgeRow {
    account: usize,
    contract: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct AssocRow {
    a: usize,
    b: usize,
    label: u8,
}

pub fn write_snapshot(dir: impl AsRef<Path>, g: &Hamig, truth: Option<&SyntheticTruth>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut w = csv::Writer::from_path(dir.join("nodes.csv"))?;
    for (i, name) in g.accounts.iter().enumerate() {
        w.serialize(NodeRow {
            node_id: i,
            kind: "account".into(),
            name: name.clone(),
        })?;
    }
    for (k, name) in g.contracts.iter().enumerate() {
        w.serialize(NodeRow {
            node_id: g.contract_node(k),
            kind: "contract".into(),
            name: name.clone(),
        })?;
    }
    w.flush().map_err(|e| Error::io(dir.join("nodes.csv"), e))?;

    let mut w = csv::Writer::from_path(dir.join("edges_at.csv"))?;
    for &(a, c) in &g.tx_edges {
        w.serialize(TxEdgeRow {
            account: a,
            contract: g.contract_node(c),
        })?;
    }
    w.flush().map_err(|e| Error::io(dir.join("edges_at.csv"), e))?;

    let mut w = csv::Writer::from_path(dir.join("edges_aa.csv"))?;
    for e in &g.assoc_edges {
        w.serialize(AssocRow {
            a: e.a,
            b: e.b,
            label: e.label,
        })?;
    }
    w.flush().map_err(|e| Error::io(dir.join("edges_aa.csv"), e))?;

    let raw = &g.features.raw;
    let bytes: Vec<u8> = raw.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    let path = dir.join("features.bin");
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    let manifest = FeatureManifest {
        rows: raw.rows(),
        cols: raw.cols(),
        dtype: "f64".into(),
        layout: "row-major, little-endian".into(),
        columns: g.features.columns.clone(),
    };
    write_json(&dir.join("features.json"), &manifest)?;

    if let Some(t) = truth {
        write_json(&dir.join("truth.json"), t)?;
    }
    Ok(())
}

pub fn read_snapshot(dir: impl AsRef<Path>) -> Result<(Hamig, Option<SyntheticTruth>)> {
    let dir = dir.as_ref();
    let mut accounts = Vec::new();
    let mut contracts = Vec::new();
    let nodes_path = dir.join("nodes.csv");
    let mut r = csv::Reader::from_path(&nodes_path)?;
    for (i, row) in r.deserialize::<NodeRow>().enumerate() {
        let row = row?;
        let expected = accounts.len() + contracts.len();
        if row.node_id != expected {
            return Err(Error::Row {
                path: nodes_path.display().to_string(),
                line: i as u64 + 2,
                detail: format!("node id {} out of order (expected {expected})", row.node_id),
            });
        }
        match row.kind.as_str() {
            "account" if contracts.is_empty() => accounts.push(row.name),
            "contract" => contracts.push(row.name),
            other => {
                return Err(Error::Row {
                    path: nodes_path.display().to_string(),
                    line: i as u64 + 2,
                    detail: format!("unexpected node kind `{other}`"),
                })
            }
        }
    }
    let n_a = accounts.len();

    let mut tx_edges = Vec::new();
    for row in csv::Reader::from_path(dir.join("edges_at.csv"))?.deserialize::<TxEdgeRow>() {
        let row = row?;
        if row.contract < n_a {
            return Err(Error::Validation(format!(
                "transaction edge target {} is not a contract node",
                row.contract
            )));
        }
        tx_edges.push((row.account, row.contract - n_a));
    }
    let mut assoc = Vec::new();
    for row in csv::Reader::from_path(dir.join("edges_aa.csv"))?.deserialize::<AssocRow>() {
        let row = row?;
        assoc.push(AssocEdge::new(row.a, row.b, row.label)?);
    }

    let manifest: FeatureManifest = read_json(&dir.join("features.json"))?;
    let path = dir.join("features.bin");
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() != manifest.rows * manifest.cols * 8 {
        return Err(Error::Validation(format!(
            "features.bin holds {} bytes, manifest expects {}x{} f64",
            bytes.len(),
            manifest.rows,
            manifest.cols
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let raw = DenseMatrix::from_vec(manifest.rows, manifest.cols, data)?;
    let features = AccountFeatures {
        raw,
        columns: manifest.columns,
    };
    let graph = Hamig::new(accounts, contracts, tx_edges, assoc, features)?;

    let truth_path = dir.join("truth.json");
    let truth = if truth_path.exists() {
        Some(read_json(&truth_path)?)
    } else {
        None
    };
    Ok((graph, truth))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::synthetic::{generate_synthetic, SyntheticConfig};

    #[test]
    fn snapshot_round_trip() {
        let cfg = SyntheticConfig {
            n_accounts: 120,
            n_contracts: 3,
            n_users: 60,
            n_assoc_labels: 40,
            seed: 9,
            ..SyntheticConfig::default()
        };
        let d = generate_synthetic(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_snapshot(dir.path(), &d.graph, Some(&d.truth)).unwrap();
        let (g, t) = read_snapshot(dir.path()).unwrap();
        assert_eq!(g, d.graph);
        assert_eq!(t.unwrap(), d.truth);
    }

    #[test]
    fn truncated_features_rejected() {
        let cfg = SyntheticConfig {
            n_accounts: 20,
            n_contracts: 2,
            n_users: 10,
            n_assoc_labels: 6,
            ..SyntheticConfig::default()
        };
        let d = generate_synthetic(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_snapshot(dir.path(), &d.graph, None).unwrap();
        let p = dir.path().join("features.bin");
        let mut bytes = fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 8);
        fs::write(&p, bytes).unwrap();
        assert!(matches!(read_snapshot(dir.path()), Err(Error::Validation(_))));
    }
}
