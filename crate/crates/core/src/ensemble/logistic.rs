//! L2-regularized logistic regression fit by gradient descent with a
//! backtracking line search.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticConfig {
    /// Penalty on the weights (not the intercept), scaled as `l2/2 * |w|^2`.
    pub l2: f64,
    pub max_iter: usize,
    /// Stop once the gradient norm falls below this.
    pub tol: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            l2: 1e-3,
            max_iter: 500,
            tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    /// Column means and scales applied before the linear map.
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub grad_norm: f64,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub(crate) fn check_labels(op: &'static str, x: &DenseMatrix, labels: &[u8]) -> Result<()> {
    if x.rows() != labels.len() {
        return Err(Error::dim(op, format!("{} rows for {} labels", x.rows(), labels.len())));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite(format!("{op}: non-finite feature")));
    }
    Ok(())
}

/// Column means and scales; constant columns keep scale 1.
pub(crate) fn column_stats(x: &DenseMatrix) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = x.shape();
    let mut mean = vec![0.0; d];
    let mut scale = vec![1.0; d];
    for c in 0..d {
        let m = (0..n).map(|r| x.get(r, c)).sum::<f64>() / n as f64;
        let var = (0..n).map(|r| (x.get(r, c) - m).powi(2)).sum::<f64>() / n as f64;
        mean[c] = m;
        if var.sqrt() > 1e-12 * m.abs().max(1.0) {
            scale[c] = var.sqrt();
        }
    }
    (mean, scale)
}

struct Objective<'a> {
    z: &'a [Vec<f64>],
    y: &'a [f64],
    l2: f64,
}

impl Objective<'_> {
    fn value(&self, w: &[f64], b: f64) -> f64 {
        let data: f64 = self
            .z
            .iter()
            .zip(self.y)
            .map(|(row, &y)| {
                let s = b + dot(row, w);
                softplus(s) - y * s
            })
            .sum();
        data / self.z.len() as f64 + 0.5 * self.l2 * dot(w, w)
    }

    fn gradient(&self, w: &[f64], b: f64) -> (Vec<f64>, f64) {
        let n = self.z.len() as f64;
        let mut gw: Vec<f64> = w.iter().map(|wi| self.l2 * wi).collect();
        let mut gb = 0.0;
        for (row, &y) in self.z.iter().zip(self.y) {
            let r = (sigmoid(b + dot(row, w)) - y) / n;
            gb += r;
            for (g, v) in gw.iter_mut().zip(row) {
                *g += r * v;
            }
        }
        (gw, gb)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn fit_logistic(x: &DenseMatrix, labels: &[u8], cfg: &LogisticConfig) -> Result<LogisticModel> {
    check_labels("fit_logistic", x, labels)?;
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::DegenerateFit("logistic regression needs both classes".into()));
    }
    if !(cfg.l2 >= 0.0 && cfg.tol > 0.0) {
        return Err(Error::Config("logistic l2 must be >= 0 and tol > 0".into()));
    }
    let (mean, scale) = column_stats(x);
    let z: Vec<Vec<f64>> = (0..x.rows())
        .map(|r| {
            x.row(r)
                .iter()
                .zip(mean.iter().zip(&scale))
                .map(|(v, (m, s))| (v - m) / s)
                .collect()
        })
        .collect();
    let y: Vec<f64> = labels.iter().map(|&v| f64::from(v)).collect();
    let obj = Objective { z: &z, y: &y, l2: cfg.l2 };

    let d = x.cols();
    let prior = n_pos as f64 / labels.len() as f64;
    let mut w = vec![0.0; d];
    let mut b = (prior / (1.0 - prior)).ln();
    let mut f = obj.value(&w, b);
    let mut step = 1.0;
    let mut iterations = 0;
    let (mut gw, mut gb) = obj.gradient(&w, b);
    let mut gnorm = (dot(&gw, &gw) + gb * gb).sqrt();
    while iterations < cfg.max_iter && gnorm >= cfg.tol {
        iterations += 1;
        let g2 = gnorm * gnorm;
        loop {
            let w_new: Vec<f64> = w.iter().zip(&gw).map(|(wi, g)| wi - step * g).collect();
            let b_new = b - step * gb;
            let f_new = obj.value(&w_new, b_new);
            if f_new <= f - 0.5 * step * g2 || step < 1e-12 {
                w = w_new;
                b = b_new;
                f = f_new;
                break;
            }
            step *= 0.5;
        }
        step = (step * 2.0).min(1e3);
        (gw, gb) = obj.gradient(&w, b);
        gnorm = (dot(&gw, &gw) + gb * gb).sqrt();
    }
    if !f.is_finite() {
        return Err(Error::NonFinite("logistic objective".into()));
    }
    Ok(LogisticModel {
        mean,
        scale,
        weights: w,
        bias: b,
        iterations,
        grad_norm: gnorm,
    })
}

impl LogisticModel {
    pub fn n_features(&self) -> usize {
        self.weights.len()
    }

    pub fn decision(&self, row: &[f64]) -> f64 {
        self.bias
            + row
                .iter()
                .zip(&self.weights)
                .zip(self.mean.iter().zip(&self.scale))
                .map(|((v, w), (m, s))| w * (v - m) / s)
                .sum::<f64>()
    }

    /// Probability of class 1 for every row.
    pub fn predict_proba(&self, x: &DenseMatrix) -> Result<Vec<f64>> {
        if x.cols() != self.n_features() {
            return Err(Error::dim(
                "LogisticModel::predict_proba",
                format!("{} columns for {} weights", x.cols(), self.n_features()),
            ));
        }
        Ok((0..x.rows()).map(|r| sigmoid(self.decision(x.row(r)))).collect())
    }
}
