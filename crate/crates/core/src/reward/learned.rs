//! Sparse linear and logistic models over [`featurize`] output.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::{Features, DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Loss {
    /// Binary cross-entropy on a sigmoid output.
    Logistic,
    Squared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
    pub seed: u64,
    /// Penalty for the ridge regressors.
    pub ridge: f64,
    pub cg_iters: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            epochs: 30,
            lr: 0.5,
            l2: 1e-6,
            seed: 0,
            ridge: 1.0,
            cg_iters: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "SparseForm", into = "SparseForm")]
pub struct LinearModel {
    pub loss: Loss,
    pub bias: f64,
    pub weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SparseForm {
    loss: Loss,
    bias: f64,
    dim: usize,
    nonzero: Vec<(usize, f64)>,
}

impl From<LinearModel> for SparseForm {
    fn from(m: LinearModel) -> Self {
        SparseForm {
            loss: m.loss,
            bias: m.bias,
            dim: m.weights.len(),
            nonzero: m
                .weights
                .iter()
                .enumerate()
                .filter(|(_, w)| **w != 0.0)
                .map(|(i, w)| (i, *w))
                .collect(),
        }
    }
}

impl From<SparseForm> for LinearModel {
    fn from(s: SparseForm) -> Self {
        let mut weights = vec![0.0; s.dim];
        for (i, w) in s.nonzero {
            if i < s.dim {
                weights[i] = w;
            }
        }
        LinearModel {
            loss: s.loss,
            bias: s.bias,
            weights,
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl LinearModel {
    pub fn zeros(loss: Loss) -> Self {
        LinearModel {
            loss,
            bias: 0.0,
            weights: vec![0.0; DIM],
        }
    }

    pub fn margin(&self, x: &Features) -> f64 {
        self.bias
            + x.entries
                .iter()
                .map(|&(i, v)| self.weights[i] * v)
                .sum::<f64>()
    }

    /// Probability for logistic models, raw value for squared loss.
    pub fn predict(&self, x: &Features) -> f64 {
        match self.loss {
            Loss::Logistic => sigmoid(self.margin(x)),
            Loss::Squared => self.margin(x),
        }
    }

    /// Per-example AdaGrad with L2 applied to touched coordinates.
    pub fn fit(loss: Loss, xs: &[Features], ys: &[f64], opts: &FitOptions) -> Self {
        assert_eq!(xs.len(), ys.len());
        let mut m = LinearModel::zeros(loss);
        if let Loss::Squared = loss {
            m.bias = ys.iter().sum::<f64>() / ys.len().max(1) as f64;
        }
        let mut acc = vec![1e-8; DIM];
        let mut acc_b = 1e-8;
        let mut order: Vec<usize> = (0..xs.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        for _ in 0..opts.epochs {
            order.shuffle(&mut rng);
            for &k in &order {
                let x = &xs[k];
                let err = m.predict(x) - ys[k];
                for &(i, v) in &x.entries {
                    let g = err * v + opts.l2 * m.weights[i];
                    acc[i] += g * g;
                    m.weights[i] -= opts.lr * g / acc[i].sqrt();
                }
                acc_b += err * err;
                m.bias -= opts.lr * err / acc_b.sqrt();
            }
        }
        m
    }
}

impl LinearModel {
    /// Ridge regression solved by conjugate gradients on the normal
    /// equations, restricted to the columns present in `xs`. The bias is not
    /// penalized.
    pub fn fit_ridge(xs: &[Features], ys: &[f64], lambda: f64, max_iter: usize) -> Self {
        let design = Csr::new(xs);
        let m = design.cols.len();
        let bias_col = m;
        // (X^T X + lambda I') w, with the bias as a trailing all-ones column.
        let apply = |w: &[f64]| -> Vec<f64> {
            let z: Vec<f64> = (0..design.rows())
                .into_par_iter()
                .map(|r| w[bias_col] + design.row(r).map(|(c, v)| w[c] * v).sum::<f64>())
                .collect();
            let mut out = design.transpose_mul(&z);
            for (c, o) in out.iter_mut().enumerate() {
                *o += lambda * w[c];
            }
            out.push(z.iter().sum());
            out
        };
        let mut rhs = design.transpose_mul(ys);
        rhs.push(ys.iter().sum());
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut w = vec![0.0; m + 1];
        let mut r = rhs;
        let mut p = r.clone();
        let mut rr = dot(&r, &r);
        let stop = 1e-20 * rr.max(1e-300);
        for _ in 0..max_iter {
            if rr <= stop {
                break;
            }
            let ap = apply(&p);
            let alpha = rr / dot(&p, &ap);
            for i in 0..=m {
                w[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let next = dot(&r, &r);
            let beta = next / rr;
            rr = next;
            for i in 0..=m {
                p[i] = r[i] + beta * p[i];
            }
        }
        let mut weights = vec![0.0; DIM];
        for (k, &c) in design.cols.iter().enumerate() {
            weights[c] = w[k];
        }
        LinearModel {
            loss: Loss::Squared,
            bias: w[m],
            weights,
        }
    }
}

/// Row-major sparse matrix over the distinct columns used by a data set,
/// with a column-major copy for transposed products.
struct Csr {
    /// Original feature index of each compact column.
    cols: Vec<usize>,
    row_start: Vec<usize>,
    entries: Vec<(usize, f64)>,
    col_start: Vec<usize>,
    by_col: Vec<(usize, f64)>,
}

impl Csr {
    fn new(xs: &[Features]) -> Csr {
        let mut cols: Vec<usize> = xs.iter().flat_map(|x| x.entries.iter().map(|e| e.0)).collect();
        cols.sort_unstable();
        cols.dedup();
        let mut row_start = vec![0];
        let mut entries = Vec::new();
        for x in xs {
            for &(i, v) in &x.entries {
                entries.push((cols.binary_search(&i).unwrap(), v));
            }
            row_start.push(entries.len());
        }
        let mut col_start = vec![0usize; cols.len() + 1];
        for &(c, _) in &entries {
            col_start[c + 1] += 1;
        }
        for c in 0..cols.len() {
            col_start[c + 1] += col_start[c];
        }
        let mut fill = col_start.clone();
        let mut by_col = vec![(0, 0.0); entries.len()];
        for r in 0..xs.len() {
            for &(c, v) in &entries[row_start[r]..row_start[r + 1]] {
                by_col[fill[c]] = (r, v);
                fill[c] += 1;
            }
        }
        Csr {
            cols,
            row_start,
            entries,
            col_start,
            by_col,
        }
    }

    fn rows(&self) -> usize {
        self.row_start.len() - 1
    }

    fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries[self.row_start[r]..self.row_start[r + 1]].iter().copied()
    }

    fn transpose_mul(&self, z: &[f64]) -> Vec<f64> {
        (0..self.cols.len())
            .into_par_iter()
            .map(|c| {
                self.by_col[self.col_start[c]..self.col_start[c + 1]]
                    .iter()
                    .map(|&(r, v)| z[r] * v)
                    .sum()
            })
            .collect()
    }
}

/// F1 of the positive class.
pub fn f1_score(pred: &[bool], truth: &[bool]) -> f64 {
    let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fneg += 1.0,
            _ => {}
        }
    }
    if tp == 0.0 {
        return 0.0;
    }
    2.0 * tp / (2.0 * tp + fp + fneg)
}

pub fn mse(pred: &[f64], truth: &[f64]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64
}
