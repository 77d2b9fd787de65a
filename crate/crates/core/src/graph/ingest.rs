//! CSV ingestion of mixer transactions and labeled associations.
//!
//! Transactions: `account_address,contract_id,direction,timestamp,gas_price,value`
//! with `direction` one of `deposit` / `withdraw`.
//! Associations: `address_a,address_b,label` with `label` in `{0, 1}`.
//! Both files are UTF-8 with a header row.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::features::extract_features;
use crate::graph::hamig::{AssocEdge, Hamig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Deposit,
    Withdraw,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Deposit => "deposit",
            Direction::Withdraw => "withdraw",
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "deposit" => Ok(Direction::Deposit),
            "withdraw" | "withdrawal" => Ok(Direction::Withdraw),
            other => Err(Error::Validation(format!("unknown direction `{other}`"))),
        }
    }
}

/// One mixer interaction, with account and contract given as local indices.
#[derive(Clone, Debug, PartialEq)]
pub struct TxEvent {
    pub account: usize,
    pub contract: usize,
    pub direction: Direction,
    pub timestamp: i64,
    pub gas_price: f64,
    pub value: f64,
}

impl TxEvent {
    pub(crate) fn canonical_cmp(&self, other: &Self) -> Ordering {
        (self.timestamp, self.contract, self.direction)
            .cmp(&(other.timestamp, other.contract, other.direction))
            .then(self.gas_price.total_cmp(&other.gas_price))
            .then(self.value.total_cmp(&other.value))
    }
}

/// Parsed transaction file: sorted node names, deduplicated edges, raw events.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TransactionLog {
    pub accounts: Vec<String>,
    pub contracts: Vec<String>,
    pub edges: Vec<(usize, usize)>,
    pub events: Vec<TxEvent>,
}

#[derive(Debug, Deserialize)]
struct TxRow {
    account_address: String,
    contract_id: String,
    direction: String,
    timestamp: i64,
    gas_price: f64,
    value: f64,
}

#[derive(Debug, Deserialize)]
struct AssocRow {
    address_a: String,
    address_b: String,
    label: u8,
}

fn open(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn row_error(path: &Path, line: u64, detail: impl Into<String>) -> Error {
    Error::Row {
        path: path.display().to_string(),
        line,
        detail: detail.into(),
    }
}

fn record_line(err: &csv::Error) -> u64 {
    err.position().map_or(0, csv::Position::line)
}

pub fn ingest_transactions(path: impl AsRef<Path>) -> Result<TransactionLog> {
    let path = path.as_ref();
    let mut reader = open(path)?;
    let mut rows = Vec::new();
    for (i, rec) in reader.deserialize::<TxRow>().enumerate() {
        let row = rec.map_err(|e| row_error(path, record_line(&e), e.to_string()))?;
        let line = i as u64 + 2;
        let direction: Direction = row
            .direction
            .parse()
            .map_err(|e: Error| Error::Validation(format!("{}:{line}: {e}", path.display())))?;
        if !row.gas_price.is_finite() || row.gas_price < 0.0 {
            return Err(Error::Validation(format!(
                "{}:{line}: negative or non-finite gas price {}",
                path.display(),
                row.gas_price
            )));
        }
        if !row.value.is_finite() || row.value < 0.0 {
            return Err(Error::Validation(format!(
                "{}:{line}: negative or non-finite value {}",
                path.display(),
                row.value
            )));
        }
        rows.push((row, direction));
    }
    Ok(build_log(rows))
}

fn build_log(rows: Vec<(TxRow, Direction)>) -> TransactionLog {
    let accounts: Vec<String> = rows
        .iter()
        .map(|(r, _)| r.account_address.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let contracts: Vec<String> = rows
        .iter()
        .map(|(r, _)| r.contract_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let a_idx: HashMap<&str, usize> = accounts.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let c_idx: HashMap<&str, usize> = contracts.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut edges = BTreeSet::new();
    let mut events = Vec::with_capacity(rows.len());
    for (r, direction) in &rows {
        let account = a_idx[r.account_address.as_str()];
        let contract = c_idx[r.contract_id.as_str()];
        edges.insert((account, contract));
        events.push(TxEvent {
            account,
            contract,
            direction: *direction,
            timestamp: r.timestamp,
            gas_price: r.gas_price,
            value: r.value,
        });
    }
    TransactionLog {
        edges: edges.into_iter().collect(),
        accounts,
        contracts,
        events,
    }
}

/// Reads labeled associations, resolving addresses against `accounts`.
/// `(a, b)` and `(b, a)` collapse to one edge; conflicting labels for the
/// same pair are rejected.
pub fn ingest_associations(path: impl AsRef<Path>, accounts: &[String]) -> Result<Vec<AssocEdge>> {
    let path = path.as_ref();
    let index: HashMap<&str, usize> = accounts.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut reader = open(path)?;
    let mut out: Vec<AssocEdge> = Vec::new();
    let mut seen: HashMap<(usize, usize), u8> = HashMap::new();
    for (i, rec) in reader.deserialize::<AssocRow>().enumerate() {
        let row = rec.map_err(|e| row_error(path, record_line(&e), e.to_string()))?;
        let line = i as u64 + 2;
        let resolve = |addr: &str| {
            index
                .get(addr)
                .copied()
                .ok_or_else(|| Error::UnresolvedNode(addr.to_string()))
        };
        let a = resolve(&row.address_a)?;
        let b = resolve(&row.address_b)?;
        if a == b {
            return Err(Error::Validation(format!(
                "{}:{line}: self-association of {}",
                path.display(),
                row.address_a
            )));
        }
        let edge = AssocEdge::new(a, b, row.label)
            .map_err(|e| Error::Validation(format!("{}:{line}: {e}", path.display())))?;
        match seen.get(&edge.pair()) {
            Some(&l) if l == edge.label => {}
            Some(_) => {
                return Err(Error::Validation(format!(
                    "{}:{line}: conflicting labels for {} / {}",
                    path.display(),
                    row.address_a,
                    row.address_b
                )))
            }
            None => {
                seen.insert(edge.pair(), edge.label);
                out.push(edge);
            }
        }
    }
    Ok(out)
}

/// Builds a graph from a transaction file and an association file.
pub fn ingest_hamig(transactions: impl AsRef<Path>, associations: impl AsRef<Path>) -> Result<Hamig> {
    let log = ingest_transactions(transactions)?;
    let assoc = ingest_associations(associations, &log.accounts)?;
    hamig_from_log(log, assoc)
}

pub fn hamig_from_log(log: TransactionLog, assoc: Vec<AssocEdge>) -> Result<Hamig> {
    let features = extract_features(log.accounts.len(), log.contracts.len(), &log.events);
    Hamig::new(log.accounts, log.contracts, log.edges, assoc, features)
}

/// Writes events back out in the transaction CSV format.
pub fn write_transactions(path: impl AsRef<Path>, log: &TransactionLog) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["account_address", "contract_id", "direction", "timestamp", "gas_price", "value"])?;
    for e in &log.events {
        w.write_record([
            log.accounts[e.account].as_str(),
            log.contracts[e.contract].as_str(),
            e.direction.as_str(),
            &e.timestamp.to_string(),
            &e.gas_price.to_string(),
            &e.value.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_associations(path: impl AsRef<Path>, accounts: &[String], assoc: &[AssocEdge]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["address_a", "address_b", "label"])?;
    for e in assoc {
        w.write_record([accounts[e.a].as_str(), accounts[e.b].as_str(), &e.label.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    const HEADER: &str = "account_address,contract_id,direction,timestamp,gas_price,value\n";

    #[test]
    fn same_pair_twice_is_one_edge_two_events() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "tx.csv",
            &format!("{HEADER}0xa,pool1,deposit,10,5.0,1.0\n0xa,pool1,withdraw,20,6.0,1.0\n"),
        );
        let log = ingest_transactions(&p).unwrap();
        assert_eq!(log.edges, vec![(0, 0)]);
        assert_eq!(log.events.len(), 2);
    }

    #[test]
    fn empty_file_is_empty_graph() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "tx.csv", "");
        let log = ingest_transactions(&p).unwrap();
        assert!(log.accounts.is_empty() && log.edges.is_empty());
        let p = write(&dir, "tx2.csv", HEADER);
        assert!(ingest_transactions(&p).unwrap().events.is_empty());
    }

    #[test]
    fn negative_gas_price_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "tx.csv", &format!("{HEADER}0xa,pool1,deposit,10,-5.0,1.0\n"));
        let err = ingest_transactions(&p).unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains(":2:")), "{err}");
    }

    #[test]
    fn unknown_direction_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "tx.csv", &format!("{HEADER}0xa,pool1,swap,10,5.0,1.0\n"));
        assert!(matches!(ingest_transactions(&p), Err(Error::Validation(_))));
    }

    #[test]
    fn malformed_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "tx.csv",
            &format!("{HEADER}0xa,pool1,deposit,10,5.0,1.0\n0xb,pool1,deposit,notanumber,5.0,1.0\n"),
        );
        match ingest_transactions(&p) {
            Err(Error::Row { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn associations_dedup_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        let accounts = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        let p = write(&dir, "aa.csv", "address_a,address_b,label\na,b,1\nb,a,1\n");
        assert_eq!(ingest_associations(&p, &accounts).unwrap().len(), 1);

        let p = write(&dir, "self.csv", "address_a,address_b,label\na,a,1\n");
        assert!(matches!(ingest_associations(&p, &accounts), Err(Error::Validation(_))));

        let p = write(&dir, "unk.csv", "address_a,address_b,label\na,zz,1\n");
        assert!(matches!(
            ingest_associations(&p, &accounts),
            Err(Error::UnresolvedNode(ref s)) if s == "zz"
        ));

        let p = write(&dir, "conflict.csv", "address_a,address_b,label\na,b,1\nb,a,0\n");
        assert!(ingest_associations(&p, &accounts).is_err());
    }

    #[test]
    fn many_distinct_associations_are_kept() {
        let dir = tempfile::tempdir().unwrap();
        let n = 200;
        let accounts: Vec<String> = (0..n).map(|i| format!("acct{i:03}")).collect();
        let mut body = String::from("address_a,address_b,label\n");
        let mut count = 0;
        'outer: for i in 0..n {
            for j in (i + 1)..n {
                body.push_str(&format!("{},{},{}\n", accounts[i], accounts[j], (i + j) % 2));
                count += 1;
                if count == 4074 {
                    break 'outer;
                }
            }
        }
        let p = write(&dir, "aa.csv", &body);
        assert_eq!(ingest_associations(&p, &accounts).unwrap().len(), 4074);
    }
}
