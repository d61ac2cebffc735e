//! Grammar-masked autoregressive policy over netlist token sequences, with
//! supervised training, PPO refinement against a frozen reference, nucleus
//! sampling and iterative adaptation.

mod grammar;
mod model;
mod tokens;
mod train;

pub use grammar::{Grammar, NetlistGrammar, NetlistState, ToyGrammar};
pub use model::{dlogp_dz, Adam, PolicyParams, StepCache};
pub use tokens::*;
pub use train::*;

use std::hash::Hasher;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generator::CategoryMix;
use crate::reward::RewardError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("out of vocabulary: {0}")]
    OutOfVocabulary(String),
    #[error("malformed sequence: {0}")]
    MalformedSequence(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("sequence hit the length cap")]
    Truncated,
    #[error("adaptation pool starved: kept {kept} of {wanted}")]
    PoolStarvation { kept: usize, wanted: usize },
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// KL penalty weight.
    pub eta: f64,
    pub clip_eps: f64,
    /// Learning rate for RL and adaptation.
    pub lr: f64,
    pub batch: usize,
    pub nucleus_p: f64,
    pub top_k: usize,
    pub ia_iters: usize,
    pub ia_pool: usize,
    pub ia_eff_floor: f64,
    /// Re-freeze the KL reference at the start of every adaptation round.
    pub ia_refreeze: bool,
    /// Samples drawn per round before giving up on filling the pool.
    pub ia_sample_budget: usize,
    /// PPO updates per adaptation round.
    pub ia_steps: usize,
    pub hidden: usize,
    pub sft_lr: f64,
    pub sft_steps: usize,
    pub rl_steps: usize,
    pub ppo_epochs: usize,
    pub mix: CategoryMix,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            eta: 0.1,
            clip_eps: 0.2,
            lr: 1e-3,
            batch: 16,
            nucleus_p: 0.9,
            top_k: 40,
            ia_iters: 3,
            ia_pool: 500,
            ia_eff_floor: 0.7,
            ia_refreeze: false,
            ia_sample_budget: 10_000,
            ia_steps: 50,
            hidden: 128,
            sft_lr: 3e-3,
            sft_steps: 3000,
            rl_steps: 600,
            ppo_epochs: 4,
            mix: CategoryMix::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 19] = [
        "eta",
        "clip_eps",
        "lr",
        "batch",
        "nucleus_p",
        "top_k",
        "ia_iters",
        "ia_pool",
        "ia_eff_floor",
        "ia_refreeze",
        "ia_sample_budget",
        "ia_steps",
        "hidden",
        "sft_lr",
        "sft_steps",
        "rl_steps",
        "ppo_epochs",
        "mix",
        "seed",
    ];

    pub fn sampling(&self) -> SampleConfig {
        SampleConfig {
            top_k: self.top_k,
            nucleus_p: self.nucleus_p,
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |m: &str| Err(PolicyError::InvalidConfig(m.to_string()));
        if !(self.eta >= 0.0) {
            return bad("eta must be >= 0");
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("clip_eps must lie in (0, 1)");
        }
        if !(self.nucleus_p > 0.0 && self.nucleus_p <= 1.0) {
            return bad("nucleus_p must lie in (0, 1]");
        }
        if self.batch == 0 || self.top_k == 0 || self.hidden == 0 {
            return bad("batch, top_k and hidden must be positive");
        }
        if !(self.lr > 0.0 && self.sft_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.mix.0.iter().any(|w| *w < 0.0) || self.mix.0.iter().sum::<f64>() <= 0.0 {
            return bad("mix weights must be non-negative and not all zero");
        }
        Ok(())
    }

    /// Set one field from its textual `key = value` form. `mix` takes
    /// three comma-separated weights for C, CE and CV.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), PolicyError> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, PolicyError> {
            v.parse()
                .map_err(|_| PolicyError::InvalidConfig(format!("{key}: cannot parse `{v}`")))
        }
        match key {
            "eta" => self.eta = num(key, value)?,
            "clip_eps" => self.clip_eps = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "batch" => self.batch = num(key, value)?,
            "nucleus_p" => self.nucleus_p = num(key, value)?,
            "top_k" => self.top_k = num(key, value)?,
            "ia_iters" => self.ia_iters = num(key, value)?,
            "ia_pool" => self.ia_pool = num(key, value)?,
            "ia_eff_floor" => self.ia_eff_floor = num(key, value)?,
            "ia_refreeze" => self.ia_refreeze = num(key, value)?,
            "ia_sample_budget" => self.ia_sample_budget = num(key, value)?,
            "ia_steps" => self.ia_steps = num(key, value)?,
            "hidden" => self.hidden = num(key, value)?,
            "sft_lr" => self.sft_lr = num(key, value)?,
            "sft_steps" => self.sft_steps = num(key, value)?,
            "rl_steps" => self.rl_steps = num(key, value)?,
            "ppo_epochs" => self.ppo_epochs = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "mix" => {
                let w: Vec<f64> = value
                    .split(',')
                    .map(|s| num(key, s.trim()))
                    .collect::<Result<_, _>>()?;
                if w.len() != 3 {
                    return Err(PolicyError::InvalidConfig("mix needs three weights".into()));
                }
                self.mix = CategoryMix([w[0], w[1], w[2]]);
            }
            _ => return Err(PolicyError::InvalidConfig(format!("unknown key `{key}`"))),
        }
        Ok(())
    }
}

/// Hash of the token names, stored in checkpoints.
pub fn vocabulary_hash() -> u64 {
    let mut h = fnv::FnvHasher::default();
    for t in 0..VOCAB {
        h.write(token_name(t).as_bytes());
        h.write_u8(0);
    }
    h.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainPhase {
    Sft,
    Rl,
    Ia,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub phase: TrainPhase,
    pub vocabulary_hash: u64,
    pub config: TrainConfig,
    pub params: PolicyParams,
    /// Frozen SFT policy used as the KL reference.
    pub reference: PolicyParams,
}

impl Checkpoint {
    pub fn new(phase: TrainPhase, config: TrainConfig, params: PolicyParams, reference: PolicyParams) -> Self {
        Checkpoint {
            phase,
            vocabulary_hash: vocabulary_hash(),
            config,
            params,
            reference,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, PolicyError> {
        let c: Checkpoint = serde_json::from_str(text)
            .map_err(|e| PolicyError::InvalidConfig(format!("checkpoint: {e}")))?;
        if c.vocabulary_hash != vocabulary_hash() {
            return Err(PolicyError::InvalidConfig(
                "checkpoint vocabulary does not match".into(),
            ));
        }
        Ok(c)
    }
}
