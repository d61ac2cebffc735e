//! Merged `key = value` run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use topo_core::generator::SearchBudget;
use topo_core::policy::TrainConfig;
use topo_core::simulator::SimConfig;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Oracle,
    Learned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub train: TrainConfig,
    pub components: usize,
    pub target: usize,
    pub max_draws: usize,
    pub stall_limit: usize,
    pub reward_backend: Backend,
    pub samples: usize,
    pub draw_factor: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let budget = SearchBudget::default();
        RunConfig {
            sim: SimConfig::default(),
            train: TrainConfig::default(),
            components: 4,
            target: 1000,
            max_draws: budget.max_draws,
            stall_limit: budget.stall_limit,
            reward_backend: Backend::Learned,
            samples: 200,
            draw_factor: 10,
            seed: 0,
            out: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Usage(format!("{key}: cannot parse `{value}`")))
}

impl RunConfig {
    pub const KEYS: [&'static str; 9] = [
        "components",
        "target",
        "max_draws",
        "stall_limit",
        "reward_backend",
        "samples",
        "draw_factor",
        "seed",
        "out",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "components" => self.components = parse(key, value)?,
            "target" => self.target = parse(key, value)?,
            "max_draws" => self.max_draws = parse(key, value)?,
            "stall_limit" => self.stall_limit = parse(key, value)?,
            "samples" => self.samples = parse(key, value)?,
            "draw_factor" => self.draw_factor = parse(key, value)?,
            "out" => self.out = Some(PathBuf::from(value)),
            "seed" => {
                self.seed = parse(key, value)?;
                self.train.seed = self.seed;
            }
            "reward_backend" => {
                self.reward_backend = match value {
                    "oracle" => Backend::Oracle,
                    "learned" => Backend::Learned,
                    _ => return Err(CliError::Usage(format!("reward_backend: `{value}` is not oracle or learned"))),
                }
            }
            k if SimConfig::KEYS.contains(&k) => {
                self.sim.set(k, value).map_err(|e| CliError::Usage(e.to_string()))?
            }
            k if TrainConfig::KEYS.contains(&k) => {
                self.train.set(k, value).map_err(|e| CliError::Usage(e.to_string()))?
            }
            _ => {
                let known: Vec<&str> = Self::KEYS
                    .iter()
                    .chain(SimConfig::KEYS.iter())
                    .chain(TrainConfig::KEYS.iter().filter(|k| **k != "seed"))
                    .copied()
                    .collect();
                return Err(CliError::Usage(format!(
                    "unknown config key `{key}`; known keys: {}",
                    known.join(", ")
                )));
            }
        }
        Ok(())
    }

    /// Apply `key = value` lines. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", i + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Defaults, then the file, then `key=value` overrides.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            cfg.apply_text(&text)?;
        }
        for kv in overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("override `{kv}`: expected key=value")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.sim.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        self.train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if self.samples == 0 || self.draw_factor == 0 {
            return Err(CliError::Usage("samples and draw_factor must be positive".into()));
        }
        Ok(())
    }

    pub fn budget(&self) -> SearchBudget {
        SearchBudget {
            max_draws: self.max_draws,
            stall_limit: self.stall_limit,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_overrides() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("# demo\neta = 0.5\nvin=3\n\nseed = 4 # trailing\n").unwrap();
        assert_eq!(cfg.train.eta, 0.5);
        assert_eq!(cfg.sim.vin, 3.0);
        assert_eq!((cfg.seed, cfg.train.seed), (4, 4));
        cfg.set("eta", "0.2").unwrap();
        assert_eq!(cfg.train.eta, 0.2);
    }

    #[test]
    fn unknown_and_malformed_are_rejected() {
        let mut cfg = RunConfig::default();
        assert!(matches!(cfg.apply_text("bogus = 1"), Err(CliError::Usage(_))));
        assert!(matches!(cfg.apply_text("eta 0.1"), Err(CliError::Usage(_))));
        assert!(matches!(cfg.set("reward_backend", "rm"), Err(CliError::Usage(_))));
        assert!(matches!(cfg.set("target", "-1"), Err(CliError::Usage(_))));
    }

    #[test]
    fn invalid_values_fail_validation() {
        let r = RunConfig::load(None, &["clip_eps=2".to_string()]);
        assert!(matches!(r, Err(CliError::Usage(_))));
        let r = RunConfig::load(None, &["vin=-1".to_string()]);
        assert!(matches!(r, Err(CliError::Usage(_))));
    }

    #[test]
    fn key_sets_are_disjoint() {
        for k in RunConfig::KEYS {
            assert!(!SimConfig::KEYS.contains(&k), "{k}");
            assert!(!TrainConfig::KEYS.contains(&k) || k == "seed", "{k}");
        }
        for k in SimConfig::KEYS {
            assert!(!TrainConfig::KEYS.contains(&k), "{k}");
        }
    }
}
