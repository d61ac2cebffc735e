//! Evaluation metrics over sampled generations: expected validity and
//! efficiency, duplicate generation rate, per-category success rates and
//! SuccessRate@m.

use std::collections::{BTreeMap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generator::{Category, Prompt};
use crate::netlist::canonical_key;
use crate::policy::{detokenize, sample_nucleus_with, NetlistGrammar, PolicyError, PolicyParams, SampleConfig};
use crate::reward::{pool_matches, EstimatorBackend, RewardError, VALIDITY_THRESHOLD};
use crate::simulator::{Design, SimResult};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("no samples to evaluate")]
    EmptySampleSet,
    #[error("invalid counts: {generated} generated, {unique} unique")]
    InvalidCounts { generated: usize, unique: usize },
    #[error("no prompts to evaluate")]
    EmptyPromptSet,
    #[error("m must be at least 1")]
    InvalidM,
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

/// Fraction of samples counted valid and mean efficiency, with invalid
/// samples contributing zero efficiency. Learned validity counts at
/// [`VALIDITY_THRESHOLD`].
pub fn expected_scores(samples: &[Design], backend: &EstimatorBackend) -> Result<(f64, f64), EvalError> {
    if samples.is_empty() {
        return Err(EvalError::EmptySampleSet);
    }
    let (mut valid, mut eff) = (0usize, 0.0);
    for d in samples {
        let s = backend.scores(d)?;
        if s.s_valid >= VALIDITY_THRESHOLD {
            valid += 1;
            eff += s.s_eff;
        }
    }
    let n = samples.len() as f64;
    Ok((valid as f64 / n, eff / n))
}

/// Duplicate generation rate: samples drawn per unique topology.
pub fn dgr(generated: usize, unique: usize) -> Result<f64, EvalError> {
    if unique == 0 || generated < unique {
        return Err(EvalError::InvalidCounts { generated, unique });
    }
    Ok(generated as f64 / unique as f64)
}

/// Simulator-adjudicated success of a design against its prompt.
pub fn success(prompt: &Prompt, d: &Design, sim: &SimResult) -> bool {
    if !sim.valid || !pool_matches(prompt, d) {
        return false;
    }
    match prompt.category {
        Category::C => true,
        Category::CE => prompt.eff_floor.is_some_and(|f| sim.efficiency > f),
        Category::CV => prompt.vout_bound.is_some_and(|(rel, b)| rel.holds(sim.vout, b)),
    }
}

/// Per-prompt success outcomes of repeated generations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessTable {
    pub categories: Vec<Category>,
    pub outcomes: Vec<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessRates {
    pub c: Option<f64>,
    pub ce: Option<f64>,
    pub cv: Option<f64>,
    pub overall: f64,
}

impl SuccessTable {
    /// Percentages where a prompt succeeds if any of its first `m`
    /// generations does. Categories absent from the table are `None`.
    pub fn rates(&self, m: usize) -> Result<SuccessRates, EvalError> {
        if m == 0 {
            return Err(EvalError::InvalidM);
        }
        if self.outcomes.is_empty() {
            return Err(EvalError::EmptyPromptSet);
        }
        let mut hit = [0usize; 3];
        let mut count = [0usize; 3];
        for (c, o) in self.categories.iter().zip(&self.outcomes) {
            count[*c as usize] += 1;
            if o.iter().take(m).any(|x| *x) {
                hit[*c as usize] += 1;
            }
        }
        let pct = |i: usize| (count[i] > 0).then(|| 100.0 * hit[i] as f64 / count[i] as f64);
        Ok(SuccessRates {
            c: pct(0),
            ce: pct(1),
            cv: pct(2),
            overall: 100.0 * hit.iter().sum::<usize>() as f64 / count.iter().sum::<usize>() as f64,
        })
    }
}

/// Adjudicate `m` designs per prompt from an arbitrary generator.
pub fn success_table_with<F>(
    prompts: &[Prompt],
    m: usize,
    oracle: &EstimatorBackend,
    mut generate: F,
) -> Result<SuccessTable, EvalError>
where
    F: FnMut(&Prompt) -> Result<Design, EvalError>,
{
    if prompts.is_empty() {
        return Err(EvalError::EmptyPromptSet);
    }
    if m == 0 {
        return Err(EvalError::InvalidM);
    }
    let mut outcomes = Vec::with_capacity(prompts.len());
    for x in prompts {
        let mut row = Vec::with_capacity(m);
        for _ in 0..m {
            let d = generate(x)?;
            row.push(success(x, &d, &oracle.simulate(&d)));
        }
        outcomes.push(row);
    }
    Ok(SuccessTable {
        categories: prompts.iter().map(|x| x.category).collect(),
        outcomes,
    })
}

/// Generate `m` policy samples per prompt and adjudicate each with the
/// simulator.
pub fn success_table(
    policy: &PolicyParams,
    prompts: &[Prompt],
    m: usize,
    sampling: &SampleConfig,
    oracle: &EstimatorBackend,
    seed: u64,
) -> Result<SuccessTable, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    success_table_with(prompts, m, oracle, |x| {
        let (tokens, _) = sample_nucleus_with(&NetlistGrammar, policy, x, sampling, &mut rng)?;
        let (netlist, duty) = detokenize(&tokens)?;
        Ok(Design::new(netlist, duty))
    })
}

/// SuccessRate@m for every `m` in `ms`, from one table of `max(ms)`
/// generations per prompt.
pub fn success_rate(
    policy: &PolicyParams,
    prompts: &[Prompt],
    ms: &[usize],
    sampling: &SampleConfig,
    oracle: &EstimatorBackend,
    seed: u64,
) -> Result<BTreeMap<usize, SuccessRates>, EvalError> {
    let top = ms.iter().copied().max().ok_or(EvalError::InvalidM)?;
    let table = success_table(policy, prompts, top, sampling, oracle, seed)?;
    ms.iter().map(|&m| Ok((m, table.rates(m)?))).collect()
}

/// Draw from the policy, cycling through `prompts`, until `unique`
/// distinct topologies are found or `max_draws` is reached. Returns the
/// unique designs and the number of draws.
pub fn sample_unique(
    policy: &PolicyParams,
    prompts: &[Prompt],
    unique: usize,
    max_draws: usize,
    sampling: &SampleConfig,
    seed: u64,
) -> Result<(Vec<Design>, usize), EvalError> {
    if prompts.is_empty() {
        return Err(EvalError::EmptyPromptSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut draws = 0;
    while out.len() < unique && draws < max_draws {
        let x = &prompts[draws % prompts.len()];
        draws += 1;
        let (tokens, _) = sample_nucleus_with(&NetlistGrammar, policy, x, sampling, &mut rng)?;
        let (netlist, duty) = detokenize(&tokens)?;
        if seen.insert(canonical_key(&netlist)) {
            out.push(Design::new(netlist, duty));
        }
    }
    Ok((out, draws))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub e_valid_clf: Option<f64>,
    pub e_valid_sim: f64,
    pub e_eff_clf: Option<f64>,
    pub e_eff_sim: f64,
    pub dgr: f64,
    pub sigma: SuccessRates,
    pub success_at_m: BTreeMap<usize, f64>,
    pub sample_count: usize,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str =
        "label,e_valid_clf,e_valid_sim,e_eff_clf,e_eff_sim,dgr,sigma_c,sigma_ce,sigma_cv,sigma_o,success_at_m,sample_count";

    pub fn csv_row(&self) -> String {
        let opt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:.6}"));
        let at_m: Vec<String> = self
            .success_at_m
            .iter()
            .map(|(m, v)| format!("{m}:{v:.2}"))
            .collect();
        format!(
            "{},{},{:.6},{},{:.6},{:.6},{},{},{},{:.2},{},{}",
            self.label,
            opt(self.e_valid_clf),
            self.e_valid_sim,
            opt(self.e_eff_clf),
            self.e_eff_sim,
            self.dgr,
            opt(self.sigma.c),
            opt(self.sigma.ce),
            opt(self.sigma.cv),
            self.sigma.overall,
            at_m.join(" "),
            self.sample_count
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub samples: usize,
    /// Draw cap for the unique-sample search, as a multiple of `samples`.
    pub draw_factor: usize,
    pub ms: Vec<usize>,
    pub sampling: SampleConfig,
    pub seed: u64,
}

/// All metrics for one policy. `learned` supplies the classifier columns.
pub fn evaluate(
    label: &str,
    policy: &PolicyParams,
    prompts: &[Prompt],
    oracle: &EstimatorBackend,
    learned: Option<&EstimatorBackend>,
    opts: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    let (designs, draws) = sample_unique(
        policy,
        prompts,
        opts.samples,
        opts.samples * opts.draw_factor.max(1),
        &opts.sampling,
        opts.seed,
    )?;
    let (e_valid_sim, e_eff_sim) = expected_scores(&designs, oracle)?;
    let clf = learned.map(|b| expected_scores(&designs, b)).transpose()?;
    let rates = success_rate(policy, prompts, &opts.ms, &opts.sampling, oracle, opts.seed ^ 0x55)?;
    let sigma = match rates.get(&1) {
        Some(r) => r.clone(),
        None => success_rate(policy, prompts, &[1], &opts.sampling, oracle, opts.seed ^ 0x55)?[&1].clone(),
    };
    Ok(EvalReport {
        label: label.to_string(),
        e_valid_clf: clf.map(|c| c.0),
        e_valid_sim,
        e_eff_clf: clf.map(|c| c.1),
        e_eff_sim,
        dgr: dgr(draws, designs.len())?,
        sigma,
        success_at_m: rates.iter().map(|(m, r)| (*m, r.overall)).collect(),
        sample_count: designs.len(),
    })
}
