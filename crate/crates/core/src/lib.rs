//! Switching-converter topology synthesis: netlist model, an idealized
//! switched-linear simulator, random-search dataset generation, reward
//! estimators, a small autoregressive policy with SFT/PPO training, and
//! evaluation metrics.

pub mod netlist;
pub mod simulator;
pub mod generator;
pub mod reward;
pub mod policy;
pub mod evalharness;
