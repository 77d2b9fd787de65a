//! One-hidden-layer perceptron with a softmax output, trained with Adam on
//! the autodiff tape.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ensemble::logistic::{check_labels, column_stats, sigmoid};
use crate::error::{Error, Result};
use crate::freq_decomp::xavier;
use crate::numerics::{AdamState, DenseMatrix, ParamStore, Tape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            lr: 0.003,
            epochs: 100,
            batch_size: 128,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub w1: DenseMatrix,
    pub b1: DenseMatrix,
    pub w2: DenseMatrix,
    pub b2: DenseMatrix,
    /// Mean training cross-entropy per epoch.
    pub loss_history: Vec<f64>,
}

fn standardized(x: &DenseMatrix, mean: &[f64], scale: &[f64]) -> DenseMatrix {
    let mut out = x.clone();
    for r in 0..x.rows() {
        for (c, v) in out.row_mut(r).iter_mut().enumerate() {
            *v = (*v - mean[c]) / scale[c];
        }
    }
    out
}

pub fn fit_mlp(x: &DenseMatrix, labels: &[u8], cfg: &MlpConfig) -> Result<MlpModel> {
    check_labels("fit_mlp", x, labels)?;
    if cfg.hidden == 0 || cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::Config("mlp hidden, batch_size and lr must be positive".into()));
    }
    let (mean, scale) = column_stats(x);
    let z = standardized(x, &mean, &scale);
    let d = x.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let w1 = store.add("mlp.w1", xavier(d, cfg.hidden, &mut rng));
    let b1 = store.add("mlp.b1", DenseMatrix::zeros(1, cfg.hidden));
    let w2 = store.add("mlp.w2", DenseMatrix::zeros(cfg.hidden, 2));
    let b2 = store.add("mlp.b2", DenseMatrix::zeros(1, 2));
    let mut adam = AdamState::new(&store, cfg.lr);
    let mut order: Vec<usize> = (0..x.rows()).collect();
    let mut loss_history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut seen) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let xb = tape.constant(z.select_rows(chunk)?);
            let (w1v, b1v, w2v, b2v) = (
                tape.param(&store, w1),
                tape.param(&store, b1),
                tape.param(&store, w2),
                tape.param(&store, b2),
            );
            let h = tape.matmul(xb, w1v)?;
            let h = tape.add_row(h, b1v)?;
            let h = tape.tanh(h);
            let o = tape.matmul(h, w2v)?;
            let o = tape.add_row(o, b2v)?;
            let lp = tape.log_softmax_rows(o);
            let targets: Vec<usize> = chunk.iter().map(|&i| usize::from(labels[i])).collect();
            let picked = tape.pick_cols(lp, targets)?;
            let nll = tape.mean(picked)?;
            let loss = tape.scale(nll, -1.0);
            let value = tape.scalar_value(loss)?;
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("mlp loss at epoch {epoch}")));
            }
            tape.backward(loss, &mut store)?;
            adam.step(&mut store);
            total += value * chunk.len() as f64;
            seen += chunk.len();
        }
        loss_history.push(total / seen.max(1) as f64);
    }
    Ok(MlpModel {
        mean,
        scale,
        w1: store.value(w1).clone(),
        b1: store.value(b1).clone(),
        w2: store.value(w2).clone(),
        b2: store.value(b2).clone(),
        loss_history,
    })
}

impl MlpModel {
    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    /// Probability of class 1 for every row.
    pub fn predict_proba(&self, x: &DenseMatrix) -> Result<Vec<f64>> {
        if x.cols() != self.n_features() {
            return Err(Error::dim(
                "MlpModel::predict_proba",
                format!("{} columns for {} inputs", x.cols(), self.n_features()),
            ));
        }
        let z = standardized(x, &self.mean, &self.scale);
        let h = z.matmul(&self.w1)?;
        let mut out = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let hr: Vec<f64> = h.row(r).iter().zip(self.b1.row(0)).map(|(a, b)| (a + b).tanh()).collect();
            let logit = |c: usize| self.b2.get(0, c) + hr.iter().enumerate().map(|(k, v)| v * self.w2.get(k, c)).sum::<f64>();
            let (l0, l1) = (logit(0), logit(1));
            out.push(sigmoid(l1 - l0));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn blobs(n: usize, seed: u64) -> (DenseMatrix, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let c = (i % 2) as f64;
            rows.push(vec![
                3.0 * c + rng.gen_range(-1.0..1.0),
                -2.0 * c + rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ]);
            y.push(u8::from(i % 2 == 1));
        }
        (DenseMatrix::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn zero_epochs_predict_half() {
        let (x, y) = blobs(20, 0);
        let cfg = MlpConfig {
            epochs: 0,
            ..MlpConfig::default()
        };
        let m = fit_mlp(&x, &y, &cfg).unwrap();
        assert!(m.predict_proba(&x).unwrap().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn separable_set_is_learned() {
        let (x, y) = blobs(100, 1);
        let m = fit_mlp(&x, &y, &MlpConfig::default()).unwrap();
        let p = m.predict_proba(&x).unwrap();
        let acc = p.iter().zip(&y).filter(|(p, &y)| (**p >= 0.5) == (y == 1)).count();
        assert_eq!(acc, 100);
    }

    #[test]
    fn loss_decreases_over_first_ten_epochs() {
        let (x, y) = blobs(200, 2);
        let cfg = MlpConfig {
            epochs: 10,
            ..MlpConfig::default()
        };
        let m = fit_mlp(&x, &y, &cfg).unwrap();
        let h = &m.loss_history;
        assert!(h.windows(2).all(|w| w[1] < w[0]), "{h:?}");
    }

    #[test]
    fn deterministic_under_seed() {
        let (x, y) = blobs(40, 3);
        let cfg = MlpConfig {
            epochs: 5,
            seed: 9,
            ..MlpConfig::default()
        };
        assert_eq!(fit_mlp(&x, &y, &cfg).unwrap(), fit_mlp(&x, &y, &cfg).unwrap());
    }

    #[test]
    fn wrong_width_is_dimension_error() {
        let (x, y) = blobs(10, 4);
        let m = fit_mlp(&x, &y, &MlpConfig { epochs: 1, ..MlpConfig::default() }).unwrap();
        assert!(matches!(m.predict_proba(&DenseMatrix::zeros(2, 5)), Err(Error::Dimension { .. })));
    }
}
