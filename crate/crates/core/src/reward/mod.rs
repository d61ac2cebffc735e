//! Score estimators for validity, efficiency and output voltage, and the
//! piecewise reward used during reinforcement learning.

mod features;
mod learned;

pub use features::{featurize, Features, DENSE_LEN, DIM, FEATURE_MAP_VERSION};
pub use learned::{f1_score, mse, sigmoid, FitOptions, LinearModel, Loss};

use std::collections::{HashMap, HashSet};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generator::{Category, Prompt};
use crate::netlist::{canonical_key, CanonicalKey, DutyCycle};
use crate::simulator::{simulate, Design, SimConfig, SimResult};

/// Scores below this count as invalid.
pub const VALIDITY_THRESHOLD: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardScores {
    pub s_valid: f64,
    pub s_eff: f64,
    pub s_vout: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RewardError {
    #[error("learned backend has no trained parameters")]
    UntrainedBackend,
    #[error("feature map version {found} does not match {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("malformed estimator artifact: {0}")]
    Artifact(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QualityMetrics {
    pub validity_f1: f64,
    pub efficiency_mse: f64,
    pub vout_mse: f64,
    pub samples: usize,
}

/// Trained validity classifier plus efficiency and vout regressors.
impl RewardScores {
    /// Scores read off a simulation: validity 0 or 1, zero efficiency when
    /// invalid.
    pub fn from_sim(r: &SimResult) -> Self {
        RewardScores {
            s_valid: if r.valid { 1.0 } else { 0.0 },
            s_eff: if r.valid { r.efficiency.clamp(0.0, 1.0) } else { 0.0 },
            s_vout: r.vout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedEstimators {
    pub version: u32,
    pub validity: LinearModel,
    pub efficiency: LinearModel,
    pub vout: LinearModel,
    /// Held-out quality recorded at training time.
    pub metrics: Option<QualityMetrics>,
}

impl LearnedEstimators {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("estimators serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, RewardError> {
        #[derive(Deserialize)]
        struct Tag {
            version: u32,
        }
        let tag: Tag =
            serde_json::from_str(text).map_err(|e| RewardError::Artifact(e.to_string()))?;
        if tag.version != FEATURE_MAP_VERSION {
            return Err(RewardError::VersionMismatch {
                found: tag.version,
                expected: FEATURE_MAP_VERSION,
            });
        }
        serde_json::from_str(text).map_err(|e| RewardError::Artifact(e.to_string()))
    }

    fn scores(&self, d: &Design) -> RewardScores {
        let x = featurize(d);
        RewardScores {
            s_valid: self.validity.predict(&x),
            s_eff: self.efficiency.predict(&x).clamp(0.0, 1.0),
            s_vout: self.vout.predict(&x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Oracle,
    Learned,
}

/// Where scores come from. Oracle results are memoized per topology and duty.
#[derive(Debug)]
pub struct EstimatorBackend {
    pub mode: Mode,
    pub learned: Option<LearnedEstimators>,
    pub sim: SimConfig,
    cache: Mutex<HashMap<(CanonicalKey, DutyCycle), SimResult>>,
}

impl EstimatorBackend {
    pub fn oracle(sim: SimConfig) -> Self {
        EstimatorBackend {
            mode: Mode::Oracle,
            learned: None,
            sim,
            cache: Mutex::default(),
        }
    }

    pub fn learned(est: Option<LearnedEstimators>, sim: SimConfig) -> Self {
        EstimatorBackend {
            mode: Mode::Learned,
            learned: est,
            sim,
            cache: Mutex::default(),
        }
    }

    /// Simulator result, from the cache when this topology was seen before.
    pub fn simulate(&self, d: &Design) -> SimResult {
        let key = (canonical_key(&d.netlist), d.duty);
        if let Some(r) = self.cache.lock().unwrap().get(&key) {
            return r.clone();
        }
        let r = simulate(d, &self.sim);
        self.cache.lock().unwrap().insert(key, r.clone());
        r
    }

    pub fn cached_simulations(&self) -> usize {
        self.cache.lock().unwrap().len()
    }

    pub fn scores(&self, d: &Design) -> Result<RewardScores, RewardError> {
        match self.mode {
            Mode::Oracle => Ok(RewardScores::from_sim(&self.simulate(d))),
            Mode::Learned => Ok(self
                .learned
                .as_ref()
                .ok_or(RewardError::UntrainedBackend)?
                .scores(d)),
        }
    }
}

pub fn estimate_validity(d: &Design, b: &EstimatorBackend) -> Result<f64, RewardError> {
    b.scores(d).map(|s| s.s_valid)
}

pub fn estimate_efficiency(d: &Design, b: &EstimatorBackend) -> Result<f64, RewardError> {
    b.scores(d).map(|s| s.s_eff)
}

pub fn estimate_vout(d: &Design, b: &EstimatorBackend) -> Result<f64, RewardError> {
    b.scores(d).map(|s| s.s_vout)
}

/// Whether the design uses exactly the prompt's device multiset.
pub fn pool_matches(x: &Prompt, y: &Design) -> bool {
    x.pool() == y.netlist.kind_counts()
}

/// Whether the scores satisfy the prompt's efficiency or vout constraint.
/// Component-only prompts have neither, so this is always false for them.
pub fn meets_constraints(x: &Prompt, y: &Design, s: &RewardScores) -> bool {
    if !pool_matches(x, y) {
        return false;
    }
    match x.category {
        Category::C => false,
        Category::CE => x.eff_floor.is_some_and(|f| s.s_eff > f),
        Category::CV => x.vout_bound.is_some_and(|(rel, b)| rel.holds(s.s_vout, b)),
    }
}

/// -1 for an invalid design, 1 when a stated constraint is met, otherwise
/// the efficiency score.
pub fn reward(x: &Prompt, y: &Design, s: &RewardScores) -> f64 {
    if s.s_valid < VALIDITY_THRESHOLD {
        -1.0
    } else if meets_constraints(x, y, s) {
        1.0
    } else {
        s.s_eff
    }
}

/// Shuffle and hold out a fraction of the designs.
pub fn split_random(
    data: &[(Design, SimResult)],
    holdout: f64,
    seed: u64,
) -> (Vec<(Design, SimResult)>, Vec<(Design, SimResult)>) {
    let mut all = data.to_vec();
    all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = (all.len() as f64 * holdout).round() as usize;
    let held = all.split_off(all.len() - cut);
    (all, held)
}

/// Split simulated designs so no topology lands on both sides.
pub fn split_by_topology(
    data: &[(Design, SimResult)],
    holdout: f64,
    seed: u64,
) -> (Vec<(Design, SimResult)>, Vec<(Design, SimResult)>) {
    let keys: Vec<CanonicalKey> = data.par_iter().map(|(d, _)| canonical_key(&d.netlist)).collect();
    let mut distinct: Vec<&CanonicalKey> = keys.iter().collect::<HashSet<_>>().into_iter().collect();
    distinct.sort();
    distinct.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = (distinct.len() as f64 * holdout).round() as usize;
    let test: HashSet<&CanonicalKey> = distinct[..cut].iter().copied().collect();
    let (mut train, mut held) = (Vec::new(), Vec::new());
    for (pair, k) in data.iter().zip(&keys) {
        if test.contains(k) {
            held.push(pair.clone());
        } else {
            train.push(pair.clone());
        }
    }
    (train, held)
}

/// Fit all three estimators. The vout regressor only sees valid designs.
pub fn train_estimators(data: &[(Design, SimResult)], opts: &FitOptions) -> LearnedEstimators {
    let xs: Vec<Features> = data.par_iter().map(|(d, _)| featurize(d)).collect();
    let valid: Vec<f64> = data.iter().map(|(_, r)| r.valid as u8 as f64).collect();
    let eff: Vec<f64> = data
        .iter()
        .map(|(_, r)| if r.valid { r.efficiency } else { 0.0 })
        .collect();
    let (vx, vy): (Vec<Features>, Vec<f64>) = xs
        .iter()
        .zip(data)
        .filter(|(_, (_, r))| r.valid)
        .map(|(x, (_, r))| (x.clone(), r.vout))
        .unzip();
    let ((validity, efficiency), vout) = rayon::join(
        || {
            rayon::join(
                || LinearModel::fit(Loss::Logistic, &xs, &valid, opts),
                || LinearModel::fit_ridge(&xs, &eff, opts.ridge, opts.cg_iters),
            )
        },
        || LinearModel::fit_ridge(&vx, &vy, opts.ridge, opts.cg_iters),
    );
    LearnedEstimators {
        version: FEATURE_MAP_VERSION,
        validity,
        efficiency,
        vout,
        metrics: None,
    }
}

/// F1 at the validity threshold, efficiency MSE over all designs, vout MSE
/// over simulator-valid designs.
pub fn evaluate_estimators(est: &LearnedEstimators, data: &[(Design, SimResult)]) -> QualityMetrics {
    let scores: Vec<RewardScores> = data.par_iter().map(|(d, _)| est.scores(d)).collect();
    let pred: Vec<bool> = scores.iter().map(|s| s.s_valid >= VALIDITY_THRESHOLD).collect();
    let truth: Vec<bool> = data.iter().map(|(_, r)| r.valid).collect();
    let pe: Vec<f64> = scores.iter().map(|s| s.s_eff).collect();
    let te: Vec<f64> = data
        .iter()
        .map(|(_, r)| if r.valid { r.efficiency } else { 0.0 })
        .collect();
    let (pv, tv): (Vec<f64>, Vec<f64>) = scores
        .iter()
        .zip(data)
        .filter(|(_, (_, r))| r.valid)
        .map(|(s, (_, r))| (s.s_vout, r.vout))
        .unzip();
    QualityMetrics {
        validity_f1: f1_score(&pred, &truth),
        efficiency_mse: mse(&pe, &te),
        vout_mse: mse(&pv, &tv),
        samples: data.len(),
    }
}
