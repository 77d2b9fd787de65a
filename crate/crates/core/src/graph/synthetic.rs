//! Synthetic mixer graphs with planted user identities and noisy labels.
//!
//! Each latent user owns one or more accounts. Accounts of one user share a
//! gas-price regime, a time window and a pair of favourite pools, so
//! same-user pairs are recoverable from behaviour. Association labels are
//! drawn from same-user pairs (positive) and cross-user pairs (negative),
//! then a fraction `noise_rate` is flipped.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::hamig::{AssocEdge, Hamig};
use crate::graph::ingest::{hamig_from_log, Direction, TransactionLog, TxEvent};

const DAY: f64 = 86_400.0;
const BASE_TS: i64 = 1_577_836_800;
const DENOMINATIONS: [f64; 4] = [0.1, 1.0, 10.0, 100.0];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Every label flips independently with probability `noise_rate`.
    #[default]
    Symmetric,
    /// Flip probability proportional to the summed transaction degree of the
    /// two endpoints, rescaled so the mean stays `noise_rate`.
    HeuristicBiased,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_accounts: usize,
    pub n_contracts: usize,
    pub n_users: usize,
    pub tx_per_account: usize,
    pub n_assoc_labels: usize,
    pub positive_fraction: f64,
    pub noise_rate: f64,
    pub noise_mode: NoiseMode,
    /// Probability that an event goes to one of the user's favourite pools.
    pub favourite_affinity: f64,
    /// Width of the window user activity centres are drawn from.
    pub activity_window_days: f64,
    /// Std of an account's activity centre around its user's.
    pub account_jitter_days: f64,
    /// Std of an event's timestamp around its account's centre.
    pub event_jitter_days: f64,
    /// Std of the log gas price around the user's centre.
    pub gas_jitter: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_accounts: 2000,
            n_contracts: 8,
            n_users: 1000,
            tx_per_account: 6,
            n_assoc_labels: 500,
            positive_fraction: 0.5,
            noise_rate: 0.2,
            noise_mode: NoiseMode::Symmetric,
            favourite_affinity: 0.85,
            activity_window_days: 3.0 * 365.0,
            account_jitter_days: 2.0,
            event_jitter_days: 5.0,
            gas_jitter: 0.15,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_accounts < 2 {
            return Err(Error::Config("n_accounts must be at least 2".into()));
        }
        if self.n_contracts == 0 {
            return Err(Error::Config("n_contracts must be positive".into()));
        }
        if self.n_users == 0 || self.n_users > self.n_accounts {
            return Err(Error::Config(format!(
                "n_users must be in 1..={} (got {})",
                self.n_accounts, self.n_users
            )));
        }
        if self.tx_per_account == 0 {
            return Err(Error::Config("tx_per_account must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.noise_rate) {
            return Err(Error::Config(format!(
                "noise_rate must be in [0, 0.5) (got {})",
                self.noise_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.positive_fraction) {
            return Err(Error::Config("positive_fraction must be in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.favourite_affinity) {
            return Err(Error::Config("favourite_affinity must be in [0, 1]".into()));
        }
        let spreads = [
            self.activity_window_days,
            self.account_jitter_days,
            self.event_jitter_days,
            self.gas_jitter,
        ];
        if spreads.iter().any(|v| !v.is_finite() || *v < 0.0) || self.activity_window_days <= 0.0 {
            return Err(Error::Config("time and gas spreads must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn n_positive_labels(&self) -> usize {
        (self.n_assoc_labels as f64 * self.positive_fraction).round() as usize
    }
}

/// Ground truth for one labeled pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthLabel {
    pub a: usize,
    pub b: usize,
    pub true_label: u8,
    pub observed: u8,
    pub flipped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    /// Latent user of every account.
    pub owners: Vec<usize>,
    /// Aligned with the graph's association edges.
    pub labels: Vec<TruthLabel>,
    pub noise_rate: f64,
    pub noise_mode: NoiseMode,
}

impl SyntheticTruth {
    pub fn same_user(&self, a: usize, b: usize) -> bool {
        self.owners[a] == self.owners[b]
    }

    /// Labeled pairs whose planted label is positive.
    pub fn planted_pairs(&self) -> Vec<(usize, usize)> {
        self.labels
            .iter()
            .filter(|l| l.true_label == 1)
            .map(|l| (l.a, l.b))
            .collect()
    }

    pub fn n_flipped(&self) -> usize {
        self.labels.iter().filter(|l| l.flipped).count()
    }

    pub fn flipped_pairs(&self) -> HashSet<(usize, usize)> {
        self.labels
            .iter()
            .filter(|l| l.flipped)
            .map(|l| (l.a, l.b))
            .collect()
    }
}

pub struct SyntheticDataset {
    pub graph: Hamig,
    pub truth: SyntheticTruth,
    pub log: TransactionLog,
}

struct User {
    gas_center: f64,
    time_center: f64,
    favourites: Vec<usize>,
}

pub fn account_address(i: usize) -> String {
    format!("0x{i:040x}")
}

pub fn contract_name(k: usize) -> String {
    format!("pool{k:03}")
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let n_fav = cfg.n_contracts.min(2);
    let users: Vec<User> = (0..cfg.n_users)
        .map(|_| {
            let gas_center = rng.gen_range(5f64.ln()..150f64.ln()).exp();
            let time_center = rng.gen_range(0.0..cfg.activity_window_days * DAY);
            let favourites = rand::seq::index::sample(&mut rng, cfg.n_contracts, n_fav).into_vec();
            User {
                gas_center,
                time_center,
                favourites,
            }
        })
        .collect();

    let mut owners: Vec<usize> = (0..cfg.n_users)
        .chain((cfg.n_users..cfg.n_accounts).map(|_| rng.gen_range(0..cfg.n_users)))
        .collect();
    owners.shuffle(&mut rng);

    let log = generate_events(cfg, &users, &owners, &mut rng);

    let positives = sample_positives(cfg, &owners, &mut rng)?;
    let negatives = sample_negatives(cfg, &owners, cfg.n_assoc_labels - positives.len(), &mut rng)?;
    let mut pairs: Vec<((usize, usize), u8)> = positives
        .into_iter()
        .map(|p| (p, 1))
        .chain(negatives.into_iter().map(|p| (p, 0)))
        .collect();
    pairs.shuffle(&mut rng);

    let flip_probs = flip_probabilities(cfg, &log, &pairs);
    let mut labels = Vec::with_capacity(pairs.len());
    let mut assoc = Vec::with_capacity(pairs.len());
    for (&((a, b), true_label), p) in pairs.iter().zip(flip_probs) {
        let flipped = rng.gen_bool(p);
        let observed = if flipped { 1 - true_label } else { true_label };
        labels.push(TruthLabel {
            a,
            b,
            true_label,
            observed,
            flipped,
        });
        assoc.push(AssocEdge::new(a, b, observed)?);
    }

    let graph = hamig_from_log(log.clone(), assoc)?;
    Ok(SyntheticDataset {
        graph,
        truth: SyntheticTruth {
            owners,
            labels,
            noise_rate: cfg.noise_rate,
            noise_mode: cfg.noise_mode,
        },
        log,
    })
}

fn generate_events(cfg: &SyntheticConfig, users: &[User], owners: &[usize], rng: &mut ChaCha8Rng) -> TransactionLog {
    let account_jitter = Normal::new(0.0, cfg.account_jitter_days * DAY).expect("validated spread");
    let event_jitter = Normal::new(0.0, cfg.event_jitter_days * DAY).expect("validated spread");
    let gas_jitter = Normal::<f64>::new(0.0, cfg.gas_jitter).expect("validated spread");
    let mut events = Vec::new();
    let mut edges = HashSet::new();
    for (account, &owner) in owners.iter().enumerate() {
        let user = &users[owner];
        let p_deposit = if rng.gen_bool(0.5) { 0.85 } else { 0.15 };
        let centre = user.time_center + account_jitter.sample(rng);
        let n_events = cfg.tx_per_account / 2 + rng.gen_range(0..=cfg.tx_per_account);
        let n_events = n_events.max(1);
        for _ in 0..n_events {
            let contract = if rng.gen_bool(cfg.favourite_affinity) {
                user.favourites[rng.gen_range(0..user.favourites.len())]
            } else {
                rng.gen_range(0..cfg.n_contracts)
            };
            let direction = if rng.gen_bool(p_deposit) {
                Direction::Deposit
            } else {
                Direction::Withdraw
            };
            let timestamp = BASE_TS + (centre + event_jitter.sample(rng)).round() as i64;
            let gas_price = user.gas_center * f64::exp(gas_jitter.sample(rng));
            edges.insert((account, contract));
            events.push(TxEvent {
                account,
                contract,
                direction,
                timestamp,
                gas_price,
                value: DENOMINATIONS[contract % DENOMINATIONS.len()],
            });
        }
    }
    let mut edges: Vec<_> = edges.into_iter().collect();
    edges.sort_unstable();
    TransactionLog {
        accounts: (0..cfg.n_accounts).map(account_address).collect(),
        contracts: (0..cfg.n_contracts).map(contract_name).collect(),
        edges,
        events,
    }
}

fn sample_positives(cfg: &SyntheticConfig, owners: &[usize], rng: &mut ChaCha8Rng) -> Result<Vec<(usize, usize)>> {
    let mut by_user: Vec<Vec<usize>> = vec![Vec::new(); cfg.n_users];
    for (account, &u) in owners.iter().enumerate() {
        by_user[u].push(account);
    }
    let mut same_user = Vec::new();
    for accounts in &by_user {
        for (x, &a) in accounts.iter().enumerate() {
            for &b in &accounts[x + 1..] {
                same_user.push((a.min(b), a.max(b)));
            }
        }
    }
    same_user.sort_unstable();
    let want = cfg.n_positive_labels();
    if want > same_user.len() {
        return Err(Error::Config(format!(
            "{want} positive labels requested but only {} same-user pairs exist",
            same_user.len()
        )));
    }
    same_user.shuffle(rng);
    same_user.truncate(want);
    Ok(same_user)
}

fn sample_negatives(
    cfg: &SyntheticConfig,
    owners: &[usize],
    want: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(usize, usize)>> {
    let n = cfg.n_accounts;
    let mut counts = vec![0usize; cfg.n_users];
    for &u in owners {
        counts[u] += 1;
    }
    let same: usize = counts.iter().map(|c| c * c.saturating_sub(1) / 2).sum();
    let available = n * (n - 1) / 2 - same;
    if want > available {
        return Err(Error::Config(format!(
            "{want} negative labels requested but only {available} cross-user pairs exist"
        )));
    }
    let mut seen = HashSet::with_capacity(want);
    let mut out = Vec::with_capacity(want);
    while out.len() < want {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a == b || owners[a] == owners[b] {
            continue;
        }
        let pair = (a.min(b), a.max(b));
        if seen.insert(pair) {
            out.push(pair);
        }
    }
    Ok(out)
}

fn flip_probabilities(cfg: &SyntheticConfig, log: &TransactionLog, pairs: &[((usize, usize), u8)]) -> Vec<f64> {
    match cfg.noise_mode {
        NoiseMode::Symmetric => vec![cfg.noise_rate; pairs.len()],
        NoiseMode::HeuristicBiased => {
            let mut degree = vec![0.0; cfg.n_accounts];
            for &(a, _) in &log.edges {
                degree[a] += 1.0;
            }
            let w: Vec<f64> = pairs.iter().map(|((a, b), _)| degree[*a] + degree[*b]).collect();
            let mean = w.iter().sum::<f64>() / w.len().max(1) as f64;
            if mean <= 0.0 {
                return vec![cfg.noise_rate; pairs.len()];
            }
            w.iter().map(|x| (cfg.noise_rate * x / mean).min(0.95)).collect()
        }
    }
}
