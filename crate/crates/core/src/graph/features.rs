//! Per-account interaction statistics.
//!
//! Column layout for `n` contracts (width `16 + 2n`):
//!
//! | columns | meaning |
//! |---------|---------|
//! | `active` | 1 if the account has any event |
//! | `deposits_<k>`, `withdrawals_<k>` | per-contract counts |
//! | `interactions`, `distinct_contracts` | totals |
//! | `first_ts`, `last_ts` | seconds |
//! | `gap_mean/std/min/max` | inter-event time statistics |
//! | `gas_mean/std/min/max` | gas price statistics |
//! | `deposit_value`, `withdraw_value`, `value_mean` | value totals |

use serde::{Deserialize, Serialize};

use crate::graph::ingest::{Direction, TxEvent};
use crate::numerics::DenseMatrix;

#[derive(Clone, Debug, PartialEq)]
pub struct AccountFeatures {
    pub raw: DenseMatrix,
    pub columns: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureManifest {
    pub rows: usize,
    pub cols: usize,
    pub dtype: String,
    pub layout: String,
    pub columns: Vec<String>,
}

pub fn feature_columns(n_contracts: usize) -> Vec<String> {
    let mut cols = vec!["active".to_string()];
    for k in 0..n_contracts {
        cols.push(format!("deposits_{k}"));
        cols.push(format!("withdrawals_{k}"));
    }
    cols.extend(
        [
            "interactions",
            "distinct_contracts",
            "first_ts",
            "last_ts",
            "gap_mean",
            "gap_std",
            "gap_min",
            "gap_max",
            "gas_mean",
            "gas_std",
            "gas_min",
            "gas_max",
            "deposit_value",
            "withdraw_value",
            "value_mean",
        ]
        .map(String::from),
    );
    cols
}

/// Raw features, one row per account. Events are put in a canonical order
/// first, so the result does not depend on input order.
pub fn extract_features(n_accounts: usize, n_contracts: usize, events: &[TxEvent]) -> AccountFeatures {
    let columns = feature_columns(n_contracts);
    let d = columns.len();
    let mut per_account: Vec<Vec<&TxEvent>> = vec![Vec::new(); n_accounts];
    for e in events {
        per_account[e.account].push(e);
    }
    let mut data = Vec::with_capacity(n_accounts * d);
    for evs in &mut per_account {
        evs.sort_by(|x, y| x.canonical_cmp(y));
        data.extend(account_row(evs, n_contracts, d));
    }
    AccountFeatures {
        raw: DenseMatrix::from_raw(n_accounts, d, data),
        columns,
    }
}

fn account_row(evs: &[&TxEvent], n_contracts: usize, d: usize) -> Vec<f64> {
    let mut row = vec![0.0; d];
    if evs.is_empty() {
        return row;
    }
    row[0] = 1.0;
    let mut deposit_value = 0.0;
    let mut withdraw_value = 0.0;
    for e in evs {
        match e.direction {
            Direction::Deposit => {
                row[1 + 2 * e.contract] += 1.0;
                deposit_value += e.value;
            }
            Direction::Withdraw => {
                row[2 + 2 * e.contract] += 1.0;
                withdraw_value += e.value;
            }
        }
    }
    let base = 1 + 2 * n_contracts;
    let n = evs.len() as f64;
    let distinct = (0..n_contracts)
        .filter(|k| row[1 + 2 * k] + row[2 + 2 * k] > 0.0)
        .count();
    let first = evs[0].timestamp as f64;
    let last = evs[evs.len() - 1].timestamp as f64;
    let gaps: Vec<f64> = evs
        .windows(2)
        .map(|w| (w[1].timestamp - w[0].timestamp) as f64)
        .collect();
    let gas: Vec<f64> = evs.iter().map(|e| e.gas_price).collect();
    let (gap_mean, gap_std, gap_min, gap_max) = summary(&gaps);
    let (gas_mean, gas_std, gas_min, gas_max) = summary(&gas);
    let tail = [
        n,
        distinct as f64,
        first,
        last,
        gap_mean,
        gap_std,
        gap_min,
        gap_max,
        gas_mean,
        gas_std,
        gas_min,
        gas_max,
        deposit_value,
        withdraw_value,
        (deposit_value + withdraw_value) / n,
    ];
    row[base..].copy_from_slice(&tail);
    row
}

/// Mean, population std, min, max; all zero for an empty slice.
fn summary(xs: &[f64]) -> (f64, f64, f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0, 0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (mean, var.sqrt(), min, max)
}

/// Column-wise z-scoring over rows. Constant columns map to zero.
pub fn standardize(m: &DenseMatrix) -> DenseMatrix {
    let (rows, cols) = m.shape();
    let mut out = m.clone();
    if rows == 0 {
        return out;
    }
    for c in 0..cols {
        let mean = (0..rows).map(|r| m.get(r, c)).sum::<f64>() / rows as f64;
        let var = (0..rows).map(|r| (m.get(r, c) - mean).powi(2)).sum::<f64>() / rows as f64;
        let std = var.sqrt();
        for r in 0..rows {
            let v = if std > 1e-12 * mean.abs().max(1.0) {
                (m.get(r, c) - mean) / std
            } else {
                0.0
            };
            out.set(r, c, v);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(account: usize, contract: usize, direction: Direction, ts: i64, gas: f64) -> TxEvent {
        TxEvent {
            account,
            contract,
            direction,
            timestamp: ts,
            gas_price: gas,
            value: 1.0,
        }
    }

    fn col(f: &AccountFeatures, name: &str) -> usize {
        f.columns.iter().position(|c| c == name).unwrap()
    }

    #[test]
    fn gas_mean_of_three_deposits() {
        let events = vec![
            ev(0, 0, Direction::Deposit, 100, 10.0),
            ev(0, 1, Direction::Deposit, 200, 20.0),
            ev(0, 0, Direction::Deposit, 400, 30.0),
        ];
        let f = extract_features(1, 2, &events);
        assert_eq!(f.raw.get(0, col(&f, "gas_mean")), 20.0);
        assert_eq!(f.raw.get(0, col(&f, "deposits_0")), 2.0);
        assert_eq!(f.raw.get(0, col(&f, "gap_mean")), 150.0);
        assert_eq!(f.raw.get(0, col(&f, "distinct_contracts")), 2.0);
        assert_eq!(f.raw.cols(), 16 + 2 * 2);
    }

    #[test]
    fn zero_event_account_is_all_zero() {
        let f = extract_features(2, 3, &[ev(1, 2, Direction::Withdraw, 5, 1.0)]);
        assert!(f.raw.row(0).iter().all(|&v| v == 0.0));
        assert_eq!(f.raw.get(1, col(&f, "active")), 1.0);
    }

    #[test]
    fn standardized_columns_have_unit_moments() {
        let m = DenseMatrix::from_rows(&[
            vec![1.0, 5.0, 3.0],
            vec![2.0, 5.0, -1.0],
            vec![4.0, 5.0, 1e9],
            vec![8.0, 5.0, 0.5],
        ])
        .unwrap();
        let s = standardize(&m);
        for c in [0, 2] {
            let vals: Vec<f64> = (0..4).map(|r| s.get(r, c)).collect();
            let mean = vals.iter().sum::<f64>() / 4.0;
            let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
            assert!(mean.abs() < 1e-9);
            assert!((std - 1.0).abs() < 1e-9);
        }
        assert!((0..4).all(|r| s.get(r, 1) == 0.0));
    }

    #[test]
    fn order_of_events_does_not_matter() {
        let mut events = vec![
            ev(0, 0, Direction::Deposit, 100, 10.1),
            ev(1, 1, Direction::Withdraw, 50, 3.3),
            ev(0, 1, Direction::Withdraw, 900, 12.7),
            ev(0, 0, Direction::Deposit, 300, 0.7),
            ev(1, 0, Direction::Deposit, 10, 2.2),
        ];
        let a = extract_features(2, 2, &events);
        events.reverse();
        events.swap(0, 2);
        let b = extract_features(2, 2, &events);
        assert_eq!(a, b);
    }
}
