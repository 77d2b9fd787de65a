//! Training objectives: cross-view InfoNCE, the mutual loss of the two
//! heads, the per-epoch clean / confidently-flipped / remaining label
//! partition, confidence-weighted supervision and the total loss.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, Tape, Var};

/// Probabilities are floored here before any logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// How the observed label enters the mutual loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutualMode {
    /// `-log(p_LF[y] · p_HF[y])` for every labeled pair.
    #[default]
    ClassSelector,
    /// `-y · log(p_LF[1] · p_HF[1])`: zero for every negative label.
    Literal,
}

/// One InfoNCE direction: anchors `a` (N×h) against candidates `b` (N×h),
/// positives on the diagonal, cosine similarity over temperature `tau`.
pub fn infonce_direction(tape: &mut Tape, a: Var, b: Var, tau: f64) -> Result<Var> {
    if tau <= 0.0 {
        return Err(Error::Domain {
            op: "infonce",
            detail: format!("temperature {tau} must be positive"),
        });
    }
    let (n, _) = tape.shape(a);
    if tape.shape(b).0 != n {
        return Err(Error::dim(
            "infonce",
            format!("{n} anchors but {} candidates", tape.shape(b).0),
        ));
    }
    let sim = tape.cosine_matrix(a, b)?;
    let logits = tape.scale(sim, 1.0 / tau);
    let logp = tape.log_softmax_rows(logits);
    let diag = tape.pick_cols(logp, (0..n).collect::<Vec<_>>())?;
    let m = tape.mean(diag)?;
    Ok(tape.scale(m, -1.0))
}

/// Average of both directions over the anchor rows of `h_lf` and `h_hf`.
pub fn contrastive_loss(tape: &mut Tape, h_lf: Var, h_hf: Var, anchors: &[usize], tau: f64) -> Result<Var> {
    let a = tape.gather_rows(h_lf, anchors.to_vec())?;
    let b = tape.gather_rows(h_hf, anchors.to_vec())?;
    let lf_to_hf = infonce_direction(tape, a, b, tau)?;
    let hf_to_lf = infonce_direction(tape, b, a, tau)?;
    let sum = tape.add(lf_to_hf, hf_to_lf)?;
    Ok(tape.scale(sum, 0.5))
}

/// Off-tape InfoNCE of one direction.
pub fn infonce_value(a: &DenseMatrix, b: &DenseMatrix, tau: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let av = tape.constant(a.clone());
    let bv = tape.constant(b.clone());
    let l = infonce_direction(&mut tape, av, bv, tau)?;
    tape.scalar_value(l)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MutualLosses {
    pub values: Vec<f64>,
    /// Number of probabilities raised to [`PROB_FLOOR`].
    pub clamped: usize,
}

fn check_probs(op: &'static str, p_lf: &DenseMatrix, p_hf: &DenseMatrix, n: usize) -> Result<()> {
    for p in [p_lf, p_hf] {
        if p.shape() != (n, 2) {
            return Err(Error::dim(op, format!("probabilities {:?} for {n} labels", p.shape())));
        }
    }
    Ok(())
}

fn floored(p: f64, clamped: &mut usize) -> f64 {
    if p < PROB_FLOOR {
        *clamped += 1;
        PROB_FLOOR
    } else {
        p
    }
}

/// Per-pair mutual loss from `n×2` class probabilities of both heads.
pub fn mutual_loss(p_lf: &DenseMatrix, p_hf: &DenseMatrix, labels: &[u8], mode: MutualMode) -> Result<MutualLosses> {
    check_probs("mutual_loss", p_lf, p_hf, labels.len())?;
    let mut clamped = 0;
    let values = labels
        .iter()
        .enumerate()
        .map(|(r, &y)| {
            let (class, factor) = match mode {
                MutualMode::ClassSelector => (y as usize, 1.0),
                MutualMode::Literal => (1, y as f64),
            };
            let a = floored(p_lf.get(r, class), &mut clamped);
            let b = floored(p_hf.get(r, class), &mut clamped);
            -factor * (a.ln() + b.ln())
        })
        .collect();
    Ok(MutualLosses { values, clamped })
}

/// Linearly interpolated percentile, `q` in `[0, 1]`.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// `1 − t / (2 T_max)`: the percentile of the loss threshold and the
/// confidence threshold at epoch `t`.
pub fn schedule(t: usize, t_max: usize) -> f64 {
    1.0 - t as f64 / (2.0 * t_max as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LabelSet {
    #[serde(rename = "cl")]
    Clean,
    #[serde(rename = "cf")]
    Flipped,
    #[serde(rename = "re")]
    Remaining,
}

impl LabelSet {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelSet::Clean => "cl",
            LabelSet::Flipped => "cf",
            LabelSet::Remaining => "re",
        }
    }
}

/// Set membership and supervision target of one labeled pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub set: LabelSet,
    /// Class used for supervision (`c` on flipped pairs, `y` otherwise).
    pub target: u8,
    /// Supervision weight ξ.
    pub weight: f64,
    /// Agreement confidence μ, set on flipped pairs.
    pub mu: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelPartition {
    pub epoch: usize,
    pub t_max: usize,
    /// Percentile parameter, also the confidence threshold.
    pub schedule: f64,
    pub loss_threshold: f64,
    pub loss_mean: f64,
    pub assignments: Vec<Assignment>,
}

impl LabelPartition {
    /// `(|E_cl|, |E_cf|, |E_re|)`.
    pub fn counts(&self) -> (usize, usize, usize) {
        let mut c = (0, 0, 0);
        for a in &self.assignments {
            match a.set {
                LabelSet::Clean => c.0 += 1,
                LabelSet::Flipped => c.1 += 1,
                LabelSet::Remaining => c.2 += 1,
            }
        }
        c
    }

    pub fn confidence_threshold(&self) -> f64 {
        self.schedule
    }

    pub fn indices(&self, set: LabelSet) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, a)| a.set == set)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn targets(&self) -> Vec<u8> {
        self.assignments.iter().map(|a| a.target).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.assignments.iter().map(|a| a.weight).collect()
    }

    /// Every pair clean with weight one: plain supervision on observed labels.
    pub fn all_clean(labels: &[u8]) -> Self {
        Self {
            epoch: 0,
            t_max: 1,
            schedule: 1.0,
            loss_threshold: f64::INFINITY,
            loss_mean: f64::NAN,
            assignments: labels
                .iter()
                .map(|&y| Assignment {
                    set: LabelSet::Clean,
                    target: y,
                    weight: 1.0,
                    mu: None,
                })
                .collect(),
        }
    }
}

/// Argmax over two classes; a tie goes to class 0.
fn argmax2(p: &[f64]) -> u8 {
    u8::from(p[1] > p[0])
}

pub fn partition_labels(
    l_mul: &[f64],
    p_lf: &DenseMatrix,
    p_hf: &DenseMatrix,
    labels: &[u8],
    t: usize,
    t_max: usize,
) -> Result<LabelPartition> {
    if t_max == 0 || t > t_max {
        return Err(Error::Contract(format!("epoch {t} outside 0..={t_max}")));
    }
    if l_mul.len() != labels.len() {
        return Err(Error::dim(
            "partition_labels",
            format!("{} losses for {} labels", l_mul.len(), labels.len()),
        ));
    }
    check_probs("partition_labels", p_lf, p_hf, labels.len())?;
    let q = schedule(t, t_max);
    let loss_threshold = percentile(l_mul, q);
    let loss_mean = l_mul.iter().sum::<f64>() / l_mul.len().max(1) as f64;
    let cut = loss_threshold.max(loss_mean);
    let assignments = labels
        .iter()
        .enumerate()
        .map(|(r, &y)| {
            if l_mul[r] < cut {
                return Assignment {
                    set: LabelSet::Clean,
                    target: y,
                    weight: 1.0,
                    mu: None,
                };
            }
            let c_lf = argmax2(p_lf.row(r));
            let c_hf = argmax2(p_hf.row(r));
            if c_lf == c_hf && c_lf != y {
                let c = c_lf as usize;
                let mu = (p_lf.get(r, c) * p_hf.get(r, c)).sqrt();
                if mu > q {
                    return Assignment {
                        set: LabelSet::Flipped,
                        target: c_lf,
                        weight: mu,
                        mu: Some(mu),
                    };
                }
            }
            Assignment {
                set: LabelSet::Remaining,
                target: y,
                weight: 0.5,
                mu: None,
            }
        })
        .collect();
    Ok(LabelPartition {
        epoch: t,
        t_max,
        schedule: q,
        loss_threshold,
        loss_mean,
        assignments,
    })
}

/// `-(1/|E|) Σ ξ · (log p_LF[ŷ] + log p_HF[ŷ])` from `m×2` log-probabilities.
/// Log-probabilities are floored at `ln PROB_FLOOR`.
pub fn supervision_loss_on_tape(
    tape: &mut Tape,
    logp_lf: Var,
    logp_hf: Var,
    targets: &[u8],
    weights: &[f64],
) -> Result<Var> {
    let m = targets.len();
    if weights.len() != m || m == 0 {
        return Err(Error::dim(
            "supervision_loss",
            format!("{m} targets, {} weights", weights.len()),
        ));
    }
    let idx: Vec<usize> = targets.iter().map(|&t| t as usize).collect();
    let floor = PROB_FLOOR.ln();
    let lf = tape.clamp_min(logp_lf, floor);
    let hf = tape.clamp_min(logp_hf, floor);
    let lf = tape.pick_cols(lf, idx.clone())?;
    let hf = tape.pick_cols(hf, idx)?;
    let both = tape.add(lf, hf)?;
    let xi = tape.constant(DenseMatrix::column(weights.to_vec()));
    let weighted = tape.mul(both, xi)?;
    let s = tape.sum(weighted);
    Ok(tape.scale(s, -1.0 / m as f64))
}

/// Off-tape supervision loss over a partition and `n×2` probabilities.
pub fn supervision_loss(partition: &LabelPartition, p_lf: &DenseMatrix, p_hf: &DenseMatrix) -> Result<f64> {
    let n = partition.assignments.len();
    check_probs("supervision_loss", p_lf, p_hf, n)?;
    if n == 0 {
        return Err(Error::DegenerateInput {
            op: "supervision_loss",
            detail: "empty partition".into(),
        });
    }
    let mut clamped = 0;
    let total: f64 = partition
        .assignments
        .iter()
        .enumerate()
        .map(|(r, a)| {
            let c = a.target as usize;
            let l = floored(p_lf.get(r, c), &mut clamped).ln() + floored(p_hf.get(r, c), &mut clamped).ln();
            a.weight * l
        })
        .sum();
    Ok(-total / n as f64)
}

pub fn total_loss(l_con: f64, l_sup: f64, lambda: f64) -> f64 {
    l_con + lambda * l_sup
}

pub fn total_loss_on_tape(tape: &mut Tape, l_con: Var, l_sup: Var, lambda: f64) -> Result<Var> {
    let s = tape.scale(l_sup, lambda);
    tape.add(l_con, s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_con: f64,
    pub l_sup: f64,
    pub total: f64,
    pub lambda: f64,
    pub l_mul: Vec<f64>,
    pub clamped: usize,
}

impl LossReport {
    pub fn new(l_con: f64, l_sup: f64, lambda: f64, l_mul: Vec<f64>, clamped: usize) -> Result<Self> {
        let total = total_loss(l_con, l_sup, lambda);
        if !(l_con.is_finite() && l_sup.is_finite() && total.is_finite()) {
            return Err(Error::NonFinite(format!("l_con={l_con}, l_sup={l_sup}")));
        }
        Ok(Self {
            l_con,
            l_sup,
            total,
            lambda,
            l_mul,
            clamped,
        })
    }
}

/// Writes `edge,a,b,set,l_mul,mu,y,y_hat` rows for one epoch.
pub fn write_partition_csv(
    path: impl AsRef<Path>,
    pairs: &[(usize, usize)],
    labels: &[u8],
    l_mul: &[f64],
    partition: &LabelPartition,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["edge", "a", "b", "set", "l_mul", "mu", "y", "y_hat"])?;
    for (e, (((&(a, b), &y), &l), asg)) in pairs
        .iter()
        .zip(labels)
        .zip(l_mul)
        .zip(&partition.assignments)
        .enumerate()
    {
        w.write_record([
            e.to_string(),
            a.to_string(),
            b.to_string(),
            asg.set.as_str().to_string(),
            l.to_string(),
            asg.mu.map(|m| m.to_string()).unwrap_or_default(),
            y.to_string(),
            asg.target.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn probs(rows: &[[f64; 2]]) -> DenseMatrix {
        DenseMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn random(n: usize, d: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_vec(n, d, (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn brute_infonce(a: &DenseMatrix, b: &DenseMatrix, tau: f64) -> f64 {
        let n = a.rows();
        let cos = |x: &[f64], y: &[f64]| {
            let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
            let nx: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ny: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            dot / (nx * ny)
        };
        let mut total = 0.0;
        for i in 0..n {
            let num = (cos(a.row(i), b.row(i)) / tau).exp();
            let den: f64 = (0..n).map(|j| (cos(a.row(i), b.row(j)) / tau).exp()).sum();
            total += -(num / den).ln();
        }
        total / n as f64
    }

    #[test]
    fn single_anchor_is_zero() {
        let a = random(1, 4, 0);
        assert_eq!(infonce_value(&a, &random(1, 4, 1), 0.5).unwrap(), 0.0);
    }

    #[test]
    fn identical_rows_give_ln_n() {
        for n in [2usize, 8, 128] {
            let a = DenseMatrix::filled(n, 5, 0.3);
            let l = infonce_value(&a, &a, 0.5).unwrap();
            assert!((l - (n as f64).ln()).abs() < 1e-9, "{n}: {l}");
        }
    }

    #[test]
    fn orthogonal_pair_case() {
        let a = DenseMatrix::identity(2);
        let l = infonce_value(&a, &a, 0.5).unwrap();
        let e2 = 2f64.exp();
        assert!((l - -(e2 / (e2 + 1.0)).ln()).abs() < 1e-12);
        assert!((l - 0.1269).abs() < 1e-4);
    }

    #[test]
    fn zero_row_is_degenerate() {
        let mut a = random(3, 2, 0);
        a.row_mut(1).fill(0.0);
        assert!(matches!(
            infonce_value(&a, &random(3, 2, 1), 0.5),
            Err(Error::DegenerateInput { .. })
        ));
    }

    #[test]
    fn contrastive_matches_brute_force() {
        for seed in 0..5 {
            let h_lf = random(20, 6, seed);
            let h_hf = random(20, 6, seed + 50);
            let anchors = [3, 7, 1, 19, 0, 12, 5, 8];
            let mut tape = Tape::new();
            let a = tape.constant(h_lf.clone());
            let b = tape.constant(h_hf.clone());
            let l = contrastive_loss(&mut tape, a, b, &anchors, 0.5).unwrap();
            let sa = h_lf.select_rows(&anchors).unwrap();
            let sb = h_hf.select_rows(&anchors).unwrap();
            let expect = 0.5 * (brute_infonce(&sa, &sb, 0.5) + brute_infonce(&sb, &sa, 0.5));
            assert!((tape.scalar_value(l).unwrap() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_views_make_directions_equal() {
        let h = random(10, 4, 3);
        let mut tape = Tape::new();
        let a = tape.constant(h.clone());
        let l = contrastive_loss(&mut tape, a, a, &[0, 2, 4, 6], 0.5).unwrap();
        let one = infonce_value(&h.select_rows(&[0, 2, 4, 6]).unwrap(), &h.select_rows(&[0, 2, 4, 6]).unwrap(), 0.5)
            .unwrap();
        assert!((tape.scalar_value(l).unwrap() - one).abs() < 1e-15);
    }

    #[test]
    fn raising_positive_similarity_lowers_loss() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.2]]).unwrap();
        let mut b = DenseMatrix::from_rows(&[vec![0.3, 1.0], vec![1.0, 0.4], vec![0.1, -1.0]]).unwrap();
        let before = infonce_value(&a, &b, 0.5).unwrap();
        b.row_mut(0).copy_from_slice(&[0.9, 1.0]);
        assert!(infonce_value(&a, &b, 0.5).unwrap() < before);
    }

    #[test]
    fn mutual_loss_cases() {
        let m = mutual_loss(&probs(&[[0.0, 1.0]]), &probs(&[[0.0, 1.0]]), &[1], MutualMode::ClassSelector).unwrap();
        assert_eq!(m.values, vec![0.0]);
        let m = mutual_loss(&probs(&[[0.5, 0.5]]), &probs(&[[0.5, 0.5]]), &[0], MutualMode::ClassSelector).unwrap();
        assert!((m.values[0] - 0.25f64.ln().abs()).abs() < 1e-12);
        let m = mutual_loss(&probs(&[[0.0, 1.0]]), &probs(&[[0.75, 0.25]]), &[1], MutualMode::ClassSelector).unwrap();
        assert!((m.values[0] - 1.3862943611198906).abs() < 1e-12);
    }

    #[test]
    fn mutual_loss_clamps_zero() {
        let m = mutual_loss(&probs(&[[1.0, 0.0]]), &probs(&[[0.5, 0.5]]), &[1], MutualMode::ClassSelector).unwrap();
        assert_eq!(m.clamped, 1);
        assert!((m.values[0] - -(PROB_FLOOR.ln() + 0.5f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn literal_mode_zeroes_negatives() {
        let p = probs(&[[0.3, 0.7], [0.6, 0.4]]);
        let m = mutual_loss(&p, &p, &[1, 0], MutualMode::Literal).unwrap();
        assert!((m.values[0] + 2.0 * 0.7f64.ln()).abs() < 1e-12);
        assert_eq!(m.values[1], 0.0);
    }

    #[test]
    fn percentile_interpolates() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 1.0), 4.0);
        assert_eq!(percentile(&v, 0.5), 2.5);
        assert!((percentile(&v, 0.9) - 3.7).abs() < 1e-12);
    }

    #[test]
    fn epoch_zero_has_no_flips_and_drops_max_loss() {
        let l = [0.1, 0.2, 5.0, 0.3];
        let p = probs(&[[0.9, 0.1], [0.8, 0.2], [0.01, 0.99], [0.7, 0.3]]);
        let part = partition_labels(&l, &p, &p, &[0, 0, 0, 0], 0, 50).unwrap();
        assert_eq!(part.schedule, 1.0);
        assert_eq!(part.loss_threshold, 5.0);
        assert_eq!(part.assignments[2].set, LabelSet::Remaining);
        assert_eq!(part.counts(), (3, 0, 1));
    }

    #[test]
    fn final_epoch_boundary() {
        let l = [1.0, 2.0];
        let p = probs(&[[0.5, 0.5], [0.5, 0.5]]);
        let part = partition_labels(&l, &p, &p, &[0, 1], 50, 50).unwrap();
        assert_eq!(part.schedule, 0.5);
        assert!(partition_labels(&l, &p, &p, &[0, 1], 51, 50).is_err());
    }

    #[test]
    fn confident_flip_confidence() {
        let l = [0.01, 0.02, 0.03, 9.0];
        let p_lf = probs(&[[0.9, 0.1], [0.9, 0.1], [0.9, 0.1], [0.19, 0.81]]);
        let p_hf = probs(&[[0.9, 0.1], [0.9, 0.1], [0.9, 0.1], [0.36, 0.64]]);
        let part = partition_labels(&l, &p_lf, &p_hf, &[0, 0, 0, 0], 40, 50).unwrap();
        let a = part.assignments[3];
        assert_eq!(a.set, LabelSet::Flipped);
        assert_eq!(a.target, 1);
        assert!((a.mu.unwrap() - 0.72).abs() < 1e-12);
    }

    #[test]
    fn tie_never_flips() {
        let l = [0.0, 0.0, 9.0];
        let p = probs(&[[0.5, 0.5], [0.5, 0.5], [0.5, 0.5]]);
        let part = partition_labels(&l, &p, &p, &[0, 0, 1], 49, 50).unwrap();
        assert_eq!(part.assignments[2].set, LabelSet::Remaining);
    }

    #[test]
    fn supervision_cases() {
        let p1 = probs(&[[0.0, 1.0]]);
        assert_eq!(supervision_loss(&LabelPartition::all_clean(&[1]), &p1, &p1).unwrap(), 0.0);

        let half = probs(&[[0.5, 0.5]]);
        let mut part = LabelPartition::all_clean(&[1]);
        part.assignments[0] = Assignment {
            set: LabelSet::Remaining,
            target: 1,
            weight: 0.5,
            mu: None,
        };
        let l = supervision_loss(&part, &half, &half).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);

        let e = (-1f64).exp();
        let pe = probs(&[[1.0 - e, e]]);
        part.assignments[0] = Assignment {
            set: LabelSet::Flipped,
            target: 1,
            weight: 0.72,
            mu: Some(0.72),
        };
        assert!((supervision_loss(&part, &pe, &pe).unwrap() - 1.44).abs() < 1e-12);
    }

    #[test]
    fn tape_supervision_matches_plain() {
        let logits = random(6, 2, 4);
        let logits2 = random(6, 2, 5);
        let mut tape = Tape::new();
        let a = tape.constant(logits);
        let b = tape.constant(logits2);
        let la = tape.log_softmax_rows(a);
        let lb = tape.log_softmax_rows(b);
        let targets = [0u8, 1, 1, 0, 1, 0];
        let weights = [1.0, 0.5, 0.8, 1.0, 0.5, 1.0];
        let v = supervision_loss_on_tape(&mut tape, la, lb, &targets, &weights).unwrap();
        let pa = tape.value(la).map(f64::exp);
        let pb = tape.value(lb).map(f64::exp);
        let mut part = LabelPartition::all_clean(&targets);
        for (asg, &w) in part.assignments.iter_mut().zip(&weights) {
            asg.weight = w;
        }
        let plain = supervision_loss(&part, &pa, &pb).unwrap();
        assert!((tape.scalar_value(v).unwrap() - plain).abs() < 1e-12);
    }

    #[test]
    fn all_clean_supervision_is_joint_nll() {
        let p_lf = probs(&[[0.2, 0.8], [0.6, 0.4], [0.9, 0.1]]);
        let p_hf = probs(&[[0.3, 0.7], [0.5, 0.5], [0.25, 0.75]]);
        let y = [1u8, 0, 1];
        let nll: f64 = (0..3)
            .map(|r| -(p_lf.get(r, y[r] as usize).ln() + p_hf.get(r, y[r] as usize).ln()))
            .sum::<f64>()
            / 3.0;
        let l = supervision_loss(&LabelPartition::all_clean(&y), &p_lf, &p_hf).unwrap();
        assert!((l - nll).abs() < 1e-15);
    }

    #[test]
    fn total_loss_cases() {
        assert_eq!(total_loss(0.7, 3.0, 0.0), 0.7);
        assert!((total_loss(0.1, 0.2, 2.0) - 0.5).abs() < 1e-15);
        let r = LossReport::new(0.1, 0.2, 2.0, vec![], 0).unwrap();
        assert!((r.total - (r.l_con + r.lambda * r.l_sup)).abs() <= 1e-12);
    }

    proptest! {
        #[test]
        fn partition_is_exact(
            rows in proptest::collection::vec((0.0..1.0f64, 0.0..1.0f64, 0u8..2), 1..80),
            t in 0usize..50,
        ) {
            let p_lf = DenseMatrix::from_rows(&rows.iter().map(|r| vec![1.0 - r.0, r.0]).collect::<Vec<_>>()).unwrap();
            let p_hf = DenseMatrix::from_rows(&rows.iter().map(|r| vec![1.0 - r.1, r.1]).collect::<Vec<_>>()).unwrap();
            let y: Vec<u8> = rows.iter().map(|r| r.2).collect();
            let m = mutual_loss(&p_lf, &p_hf, &y, MutualMode::ClassSelector).unwrap();
            let part = partition_labels(&m.values, &p_lf, &p_hf, &y, t, 50).unwrap();
            let (cl, cf, re) = part.counts();
            prop_assert_eq!(cl + cf + re, y.len());
            prop_assert!(part.schedule >= 0.5 && part.schedule < 1.0 || t == 0);
            if t == 0 { prop_assert_eq!(cf, 0); }
            for (a, &label) in part.assignments.iter().zip(&y) {
                if a.set == LabelSet::Flipped {
                    let mu = a.mu.unwrap();
                    prop_assert!(mu > part.schedule && mu <= 1.0);
                    prop_assert!(a.target != label);
                }
            }
        }
    }
}
