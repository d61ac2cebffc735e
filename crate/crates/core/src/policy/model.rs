//! One-hidden-layer network over sparse binary features with a masked
//! softmax output. All parameters live in one flat vector.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub features: usize,
    pub hidden: usize,
    pub vocab: usize,
    /// w1 (features x hidden), b1, w2 (hidden x vocab), b2.
    pub theta: Vec<f64>,
}

/// Activations of one step, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct StepCache {
    pub h: Vec<f64>,
    /// Log-probabilities; `-inf` on masked tokens.
    pub logp: Vec<f64>,
}

impl StepCache {
    pub fn prob(&self, t: usize) -> f64 {
        self.logp[t].exp()
    }
}

impl PolicyParams {
    /// Small random first layer and a zero output layer, so the initial
    /// policy is uniform over legal tokens.
    pub fn new(features: usize, hidden: usize, vocab: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = vec![0.0; features * hidden + hidden + hidden * vocab + vocab];
        let scale = 1.0 / (8.0f64).sqrt();
        for w in &mut theta[..features * hidden] {
            *w = rng.gen_range(-scale..scale);
        }
        PolicyParams {
            features,
            hidden,
            vocab,
            theta,
        }
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    fn b1(&self) -> usize {
        self.features * self.hidden
    }

    fn w2(&self) -> usize {
        self.b1() + self.hidden
    }

    fn b2(&self) -> usize {
        self.w2() + self.hidden * self.vocab
    }

    pub fn forward(&self, active: &[usize], mask: &[bool]) -> StepCache {
        let (hd, v) = (self.hidden, self.vocab);
        let mut h = self.theta[self.b1()..self.b1() + hd].to_vec();
        for &f in active {
            let col = &self.theta[f * hd..(f + 1) * hd];
            for (a, w) in h.iter_mut().zip(col) {
                *a += w;
            }
        }
        for a in &mut h {
            *a = a.tanh();
        }
        let mut z = self.theta[self.b2()..self.b2() + v].to_vec();
        let w2 = &self.theta[self.w2()..self.b2()];
        for (j, &a) in h.iter().enumerate() {
            if a != 0.0 {
                for (zk, w) in z.iter_mut().zip(&w2[j * v..(j + 1) * v]) {
                    *zk += a * w;
                }
            }
        }
        let max = z
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(x, _)| *x)
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = max
            + z.iter()
                .zip(mask)
                .filter(|(_, &m)| m)
                .map(|(x, _)| (x - max).exp())
                .sum::<f64>()
                .ln();
        let logp = z
            .iter()
            .zip(mask)
            .map(|(x, &m)| if m { x - lse } else { f64::NEG_INFINITY })
            .collect();
        StepCache { h, logp }
    }

    /// Accumulate `dz`, the gradient with respect to the logits, back into
    /// `grad`.
    pub fn backward(&self, active: &[usize], cache: &StepCache, dz: &[f64], grad: &mut [f64]) {
        let (hd, v) = (self.hidden, self.vocab);
        let (w2, b2, b1) = (self.w2(), self.b2(), self.b1());
        for k in 0..v {
            grad[b2 + k] += dz[k];
        }
        let mut dh = vec![0.0; hd];
        for j in 0..hd {
            let row = w2 + j * v;
            let mut acc = 0.0;
            for k in 0..v {
                if dz[k] != 0.0 {
                    grad[row + k] += cache.h[j] * dz[k];
                    acc += self.theta[row + k] * dz[k];
                }
            }
            dh[j] = acc * (1.0 - cache.h[j] * cache.h[j]);
        }
        for j in 0..hd {
            grad[b1 + j] += dh[j];
        }
        for &f in active {
            for (g, d) in grad[f * hd..(f + 1) * hd].iter_mut().zip(&dh) {
                *g += d;
            }
        }
    }
}

/// Logit gradient of `log p(t)`: one-hot minus probabilities on legal tokens.
pub fn dlogp_dz(cache: &StepCache, t: usize, scale: f64, dz: &mut [f64]) {
    for (k, lp) in cache.logp.iter().enumerate() {
        if lp.is_finite() {
            let ind = if k == t { 1.0 } else { 0.0 };
            dz[k] += scale * (ind - lp.exp());
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// Descend along `grad`.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..theta.len() {
            let g = grad[i];
            if g == 0.0 && self.m[i] == 0.0 && self.v[i] == 0.0 {
                continue;
            }
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            theta[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}
