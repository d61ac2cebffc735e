use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::generator::{weighted_indices, CategoryMix, DatasetRecord, Group, Prompt};
use crate::reward::{reward, EstimatorBackend, Mode, RewardScores, VALIDITY_THRESHOLD};
use crate::simulator::Design;

use super::grammar::{Grammar, NetlistGrammar};
use super::model::{dlogp_dz, Adam, PolicyParams, StepCache};
use super::tokens::{detokenize, tokenize, Token, TokenSequence};
use super::{PolicyError, TrainConfig};

/// Features, legal mask and chosen token at every step of a sequence.
pub struct Trace {
    steps: Vec<(Vec<usize>, Vec<bool>, Token)>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

pub fn trace<G: Grammar>(g: &G, x: &G::Prompt, y: &TokenSequence) -> Result<Trace, PolicyError> {
    let mut s = g.start(x);
    let mut steps = Vec::with_capacity(y.0.len());
    for (i, &t) in y.0.iter().enumerate() {
        let mask = g.mask(&s);
        if t >= g.vocab() || !mask[t] {
            return Err(PolicyError::MalformedSequence(format!(
                "token {t} not legal at step {i}"
            )));
        }
        let mut f = Vec::new();
        g.features(x, &s, &mut f);
        steps.push((f, mask, t));
        g.advance(&mut s, t);
    }
    if !g.is_done(&s) {
        return Err(PolicyError::MalformedSequence("sequence is incomplete".into()));
    }
    Ok(Trace { steps })
}

fn forward_trace(p: &PolicyParams, tr: &Trace) -> Vec<StepCache> {
    tr.steps.iter().map(|(f, m, _)| p.forward(f, m)).collect()
}

/// Sum of per-step log-probabilities under grammar masking.
pub fn log_prob<G: Grammar>(
    g: &G,
    p: &PolicyParams,
    x: &G::Prompt,
    y: &TokenSequence,
) -> Result<f64, PolicyError> {
    let tr = trace(g, x, y)?;
    Ok(tr
        .steps
        .iter()
        .map(|(f, m, t)| p.forward(f, m).logp[*t])
        .sum())
}

/// `log_prob` and its gradient with respect to `p.theta`.
pub fn log_prob_grad<G: Grammar>(
    g: &G,
    p: &PolicyParams,
    x: &G::Prompt,
    y: &TokenSequence,
) -> Result<(f64, Vec<f64>), PolicyError> {
    let tr = trace(g, x, y)?;
    let mut grad = vec![0.0; p.len()];
    let mut total = 0.0;
    let mut dz = vec![0.0; p.vocab];
    for (f, m, t) in &tr.steps {
        let c = p.forward(f, m);
        total += c.logp[*t];
        dz.fill(0.0);
        dlogp_dz(&c, *t, 1.0, &mut dz);
        p.backward(f, &c, &dz, &mut grad);
    }
    Ok((total, grad))
}

/// Exact KL(p || ref) over the legal tokens, summed over the visited steps.
pub fn kl_estimate<G: Grammar>(
    g: &G,
    p: &PolicyParams,
    reference: &PolicyParams,
    x: &G::Prompt,
    y: &TokenSequence,
) -> Result<f64, PolicyError> {
    let tr = trace(g, x, y)?;
    Ok(tr
        .steps
        .iter()
        .map(|(f, m, _)| step_kl(&p.forward(f, m), &reference.forward(f, m)))
        .sum())
}

fn step_kl(a: &StepCache, b: &StepCache) -> f64 {
    a.logp
        .iter()
        .zip(&b.logp)
        .filter(|(x, _)| x.is_finite())
        .map(|(x, y)| x.exp() * (x - y))
        .sum::<f64>()
        .max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub top_k: usize,
    pub nucleus_p: f64,
}

/// Mask, keep the `top_k` most likely legal tokens, then the smallest
/// prefix of those whose mass reaches `nucleus_p`, renormalize and draw.
pub fn sample_nucleus_with<G: Grammar, R: Rng>(
    g: &G,
    p: &PolicyParams,
    x: &G::Prompt,
    cfg: &SampleConfig,
    rng: &mut R,
) -> Result<(TokenSequence, Vec<f64>), PolicyError> {
    let mut s = g.start(x);
    let mut out = Vec::new();
    let mut logps = Vec::new();
    let mut f = Vec::new();
    while !g.is_done(&s) {
        if out.len() >= g.max_len() {
            return Err(PolicyError::Truncated);
        }
        let mask = g.mask(&s);
        f.clear();
        g.features(x, &s, &mut f);
        let c = p.forward(&f, &mask);
        let mut cand: Vec<(Token, f64)> = c
            .logp
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_finite())
            .map(|(t, l)| (t, l.exp()))
            .collect();
        cand.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        cand.truncate(cfg.top_k.max(1));
        let total: f64 = cand.iter().map(|c| c.1).sum();
        let mut keep = 0;
        let mut mass = 0.0;
        while keep < cand.len() {
            mass += cand[keep].1;
            keep += 1;
            if mass >= cfg.nucleus_p * total {
                break;
            }
        }
        cand.truncate(keep);
        let mut u = rng.gen::<f64>() * mass;
        let mut pick = cand[cand.len() - 1].0;
        for &(t, q) in &cand {
            if u < q {
                pick = t;
                break;
            }
            u -= q;
        }
        logps.push(c.logp[pick]);
        out.push(pick);
        g.advance(&mut s, pick);
    }
    Ok((TokenSequence(out), logps))
}

pub fn sample_nucleus<G: Grammar>(
    g: &G,
    p: &PolicyParams,
    x: &G::Prompt,
    cfg: &SampleConfig,
    seed: u64,
) -> Result<TokenSequence, PolicyError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_nucleus_with(g, p, x, cfg, &mut rng).map(|r| r.0)
}

/// A sampled sequence with its reward and the behaviour policy's per-step
/// log-probabilities.
#[derive(Debug, Clone)]
pub struct Rollout<X> {
    pub prompt: X,
    pub tokens: TokenSequence,
    pub reward: f64,
    pub old_logp: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoStats {
    pub kl_mean: f64,
    /// Fraction of token terms dropped because the ratio left the clip range.
    pub clipped: f64,
}

/// Clipped-surrogate update with a KL penalty to `reference`.
///
/// Each token term uses the sequence advantage; terms whose importance
/// ratio lies outside `[1 - clip_eps, 1 + clip_eps]` contribute nothing.
pub fn ppo_update<G: Grammar>(
    g: &G,
    p: &mut PolicyParams,
    reference: &PolicyParams,
    rollouts: &[Rollout<G::Prompt>],
    advantages: &[f64],
    cfg: &TrainConfig,
    opt: &mut Adam,
) -> Result<PpoStats, PolicyError> {
    let traces: Vec<Trace> = rollouts
        .iter()
        .map(|r| trace(g, &r.prompt, &r.tokens))
        .collect::<Result<_, _>>()?;
    let ref_caches: Vec<Vec<StepCache>> =
        traces.iter().map(|t| forward_trace(reference, t)).collect();
    let n = rollouts.len().max(1) as f64;
    let (lo, hi) = (1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
    let mut stats = PpoStats::default();
    let mut grad = vec![0.0; p.len()];
    let mut dz = vec![0.0; p.vocab];
    for epoch in 0..cfg.ppo_epochs.max(1) {
        grad.fill(0.0);
        let (mut kl_sum, mut dropped, mut terms) = (0.0, 0usize, 0usize);
        for (i, ((r, tr), refs)) in rollouts.iter().zip(&traces).zip(&ref_caches).enumerate() {
            let adv = advantages[i];
            let mut seq_kl = 0.0;
            for (k, ((f, m, t), q)) in tr.steps.iter().zip(refs).enumerate() {
                let c = p.forward(f, m);
                dz.fill(0.0);
                let ratio = (c.logp[*t] - r.old_logp[k]).exp();
                terms += 1;
                if (lo..=hi).contains(&ratio) {
                    assert!(ratio >= lo && ratio <= hi);
                    dlogp_dz(&c, *t, adv * ratio, &mut dz);
                } else {
                    dropped += 1;
                }
                let kl = step_kl(&c, q);
                seq_kl += kl;
                if cfg.eta > 0.0 {
                    for (j, (a, b)) in c.logp.iter().zip(&q.logp).enumerate() {
                        if a.is_finite() {
                            dz[j] -= cfg.eta * a.exp() * ((a - b) - kl);
                        }
                    }
                }
                if dz.iter().any(|d| *d != 0.0) {
                    p.backward(f, &c, &dz, &mut grad);
                }
            }
            kl_sum += seq_kl;
        }
        if epoch == 0 {
            stats.kl_mean = kl_sum / n;
            stats.clipped = dropped as f64 / terms.max(1) as f64;
        }
        for gv in &mut grad {
            *gv = -*gv / n;
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(PolicyError::Diverged("non-finite policy gradient".into()));
        }
        opt.step(&mut p.theta, &grad);
    }
    Ok(stats)
}

/// One PPO step with the batch-mean reward as baseline.
pub fn ppo_step<G: Grammar>(
    g: &G,
    p: &PolicyParams,
    reference: &PolicyParams,
    rollouts: &[Rollout<G::Prompt>],
    cfg: &TrainConfig,
    opt: &mut Adam,
) -> Result<(PolicyParams, PpoStats), PolicyError> {
    let mean = rollouts.iter().map(|r| r.reward).sum::<f64>() / rollouts.len().max(1) as f64;
    let adv: Vec<f64> = rollouts.iter().map(|r| r.reward - mean).collect();
    let mut next = p.clone();
    let stats = ppo_update(g, &mut next, reference, rollouts, &adv, cfg, opt)?;
    Ok((next, stats))
}

/// A supervised pair plus the dataset group used for batch weighting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftExample {
    pub prompt: Prompt,
    pub tokens: TokenSequence,
    pub group: Group,
}

/// Tokenize dataset records with internal nodes relabeled in order of
/// appearance.
pub fn sft_examples(records: &[DatasetRecord]) -> Result<Vec<SftExample>, PolicyError> {
    records
        .iter()
        .map(|r| {
            Ok(SftExample {
                prompt: r.prompt.clone(),
                tokens: tokenize(&r.design.netlist.normalized(), r.design.duty)?,
                group: r.group,
            })
        })
        .collect()
}

/// Mean negative log-likelihood per token.
pub fn mean_nll(
    g: &NetlistGrammar,
    p: &PolicyParams,
    examples: &[SftExample],
) -> Result<f64, PolicyError> {
    let (mut total, mut count) = (0.0, 0usize);
    for e in examples {
        total -= log_prob(g, p, &e.prompt, &e.tokens)?;
        count += e.tokens.0.len();
    }
    Ok(total / count.max(1) as f64)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SftReport {
    /// Mean per-token NLL of each batch.
    pub batch_nll: Vec<f64>,
}

/// Maximum-likelihood training on batches drawn with the group weights.
pub fn sft_train(
    g: &NetlistGrammar,
    examples: &[SftExample],
    cfg: &TrainConfig,
) -> Result<(PolicyParams, SftReport), PolicyError> {
    if examples.is_empty() {
        return Err(PolicyError::EmptyDataset);
    }
    let mut p = PolicyParams::new(g.feature_dim(), cfg.hidden, g.vocab(), cfg.seed);
    let report = sft_continue(g, &mut p, examples, cfg)?;
    Ok((p, report))
}

pub fn sft_continue(
    g: &NetlistGrammar,
    p: &mut PolicyParams,
    examples: &[SftExample],
    cfg: &TrainConfig,
) -> Result<SftReport, PolicyError> {
    if examples.is_empty() {
        return Err(PolicyError::EmptyDataset);
    }
    let traces: Vec<Trace> = examples
        .iter()
        .map(|e| trace(g, &e.prompt, &e.tokens))
        .collect::<Result<_, _>>()?;
    let groups: Vec<Group> = examples.iter().map(|e| e.group).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5f7);
    let mut opt = Adam::new(p.len(), cfg.sft_lr);
    let mut report = SftReport::default();
    let mut grad = vec![0.0; p.len()];
    let mut dz = vec![0.0; p.vocab];
    for step in 0..cfg.sft_steps {
        let batch = weighted_indices(&groups, cfg.batch, &mut rng)
            .map_err(|_| PolicyError::EmptyDataset)?;
        grad.fill(0.0);
        let (mut nll, mut tokens) = (0.0, 0usize);
        for &i in &batch {
            for (f, m, t) in &traces[i].steps {
                let c = p.forward(f, m);
                nll -= c.logp[*t];
                dz.fill(0.0);
                dlogp_dz(&c, *t, -1.0, &mut dz);
                p.backward(f, &c, &dz, &mut grad);
            }
            tokens += traces[i].len();
        }
        let scale = 1.0 / tokens.max(1) as f64;
        for gv in &mut grad {
            *gv *= scale;
        }
        let loss = nll * scale;
        if !loss.is_finite() {
            return Err(PolicyError::Diverged(format!("sft loss at step {step}")));
        }
        opt.step(&mut p.theta, &grad);
        report.batch_nll.push(loss);
    }
    Ok(report)
}

/// Per-step RL training summary.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub reward_mean: f64,
    /// Mean reward with scores taken from the simulator.
    pub sim_reward_mean: f64,
    pub kl_mean: f64,
    pub valid_frac: f64,
    pub eff_mean: f64,
}

impl StepMetrics {
    pub const CSV_HEADER: &'static str = "step,reward_mean,sim_reward_mean,kl_mean,valid_frac,eff_mean";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.step,
            self.reward_mean,
            self.sim_reward_mean,
            self.kl_mean,
            self.valid_frac,
            self.eff_mean
        )
    }
}

/// A sample scored against its prompt.
#[derive(Debug, Clone)]
pub struct Scored {
    pub rollout: Rollout<Prompt>,
    pub design: Design,
    pub s_valid: f64,
    pub s_eff: f64,
    pub sim_reward: f64,
}

pub fn sample_and_score<R: Rng>(
    g: &NetlistGrammar,
    p: &PolicyParams,
    prompt: &Prompt,
    backend: &EstimatorBackend,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Scored, PolicyError> {
    let (tokens, old_logp) = sample_nucleus_with(g, p, prompt, &cfg.sampling(), rng)?;
    let (netlist, duty) = detokenize(&tokens)?;
    let design = Design::new(netlist, duty);
    let s = backend.scores(&design).map_err(PolicyError::Reward)?;
    let r = reward(prompt, &design, &s);
    let sim_reward = match backend.mode {
        Mode::Oracle => r,
        Mode::Learned => reward(prompt, &design, &RewardScores::from_sim(&backend.simulate(&design))),
    };
    Ok(Scored {
        rollout: Rollout {
            prompt: prompt.clone(),
            tokens,
            reward: r,
            old_logp,
        },
        design,
        s_valid: s.s_valid,
        s_eff: s.s_eff,
        sim_reward,
    })
}

/// PPO against `backend` rewards on prompts drawn with the category mix.
pub fn rl_train(
    g: &NetlistGrammar,
    p: &PolicyParams,
    reference: &PolicyParams,
    prompts: &[Prompt],
    backend: &EstimatorBackend,
    cfg: &TrainConfig,
) -> Result<(PolicyParams, Vec<StepMetrics>), PolicyError> {
    if prompts.is_empty() {
        return Err(PolicyError::EmptyDataset);
    }
    let by_cat = PromptPicker::new(prompts);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7a1);
    let mut opt = Adam::new(p.len(), cfg.lr);
    let mut cur = p.clone();
    let mut metrics = Vec::with_capacity(cfg.rl_steps);
    for step in 0..cfg.rl_steps {
        let mut batch = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let x = by_cat.draw(&cfg.mix, &mut rng);
            batch.push(sample_and_score(g, &cur, x, backend, cfg, &mut rng)?);
        }
        let rollouts: Vec<Rollout<Prompt>> = batch.iter().map(|s| s.rollout.clone()).collect();
        let (next, stats) = ppo_step(g, &cur, reference, &rollouts, cfg, &mut opt)?;
        cur = next;
        let n = batch.len() as f64;
        let m = StepMetrics {
            step,
            reward_mean: batch.iter().map(|s| s.rollout.reward).sum::<f64>() / n,
            sim_reward_mean: batch.iter().map(|s| s.sim_reward).sum::<f64>() / n,
            kl_mean: stats.kl_mean,
            valid_frac: batch.iter().filter(|s| s.s_valid >= VALIDITY_THRESHOLD).count() as f64 / n,
            eff_mean: batch.iter().map(|s| s.s_eff).sum::<f64>() / n,
        };
        if step % 100 == 0 {
            info!("rl step {step}: reward {:.3} kl {:.4}", m.reward_mean, m.kl_mean);
        }
        metrics.push(m);
    }
    Ok((cur, metrics))
}

/// Draws prompts of a requested category, falling back to any prompt.
pub struct PromptPicker<'a> {
    all: &'a [Prompt],
    by_category: [Vec<usize>; 3],
}

impl<'a> PromptPicker<'a> {
    pub fn new(all: &'a [Prompt]) -> Self {
        let mut by_category: [Vec<usize>; 3] = Default::default();
        for (i, x) in all.iter().enumerate() {
            by_category[x.category as usize].push(i);
        }
        PromptPicker { all, by_category }
    }

    pub fn draw<R: Rng>(&self, mix: &CategoryMix, rng: &mut R) -> &'a Prompt {
        let c = mix.draw(rng) as usize;
        match self.by_category[c].choose(rng) {
            Some(&i) => &self.all[i],
            None => self.all.choose(rng).unwrap(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IaRound {
    pub sampled: usize,
    pub kept: usize,
    pub starved: bool,
    /// Lowest simulator efficiency among kept samples.
    pub min_kept_efficiency: Option<f64>,
}

/// Repeated rounds of: sample, keep valid samples whose efficiency exceeds
/// `ia_eff_floor` (by the backend score and by simulation), then PPO on the
/// kept pool with the round's mean reward as baseline.
pub fn iterative_adapt(
    g: &NetlistGrammar,
    p: &PolicyParams,
    reference: &PolicyParams,
    prompts: &[Prompt],
    backend: &EstimatorBackend,
    cfg: &TrainConfig,
) -> Result<(PolicyParams, Vec<IaRound>), PolicyError> {
    let mut cur = p.clone();
    let mut reference = reference.clone();
    let mut rounds = Vec::new();
    if cfg.ia_iters == 0 {
        return Ok((cur, rounds));
    }
    if prompts.is_empty() {
        return Err(PolicyError::EmptyDataset);
    }
    let picker = PromptPicker::new(prompts);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x1a);
    let mut opt = Adam::new(p.len(), cfg.lr);
    for round in 0..cfg.ia_iters {
        if cfg.ia_refreeze {
            reference = cur.clone();
        }
        let mut pool: Vec<Rollout<Prompt>> = Vec::new();
        let mut info_round = IaRound::default();
        let mut reward_sum = 0.0;
        while pool.len() < cfg.ia_pool && info_round.sampled < cfg.ia_sample_budget {
            let x = picker.draw(&cfg.mix, &mut rng);
            let s = sample_and_score(g, &cur, x, backend, cfg, &mut rng)?;
            info_round.sampled += 1;
            reward_sum += s.rollout.reward;
            if s.s_valid >= VALIDITY_THRESHOLD && s.s_eff > cfg.ia_eff_floor {
                let sim = backend.simulate(&s.design);
                if sim.valid && sim.efficiency > cfg.ia_eff_floor {
                    info_round.min_kept_efficiency = Some(
                        info_round
                            .min_kept_efficiency
                            .map_or(sim.efficiency, |m: f64| m.min(sim.efficiency)),
                    );
                    pool.push(s.rollout);
                }
            }
        }
        info_round.kept = pool.len();
        if pool.len() < cfg.ia_pool {
            info_round.starved = true;
            warn!(
                "{}",
                PolicyError::PoolStarvation {
                    kept: pool.len(),
                    wanted: cfg.ia_pool
                }
            );
        }
        let baseline = reward_sum / info_round.sampled.max(1) as f64;
        if !pool.is_empty() {
            for _ in 0..cfg.ia_steps {
                let mut batch: Vec<Rollout<Prompt>> = (0..cfg.batch)
                    .map(|_| pool.choose(&mut rng).unwrap().clone())
                    .collect();
                for r in &mut batch {
                    let tr = trace(g, &r.prompt, &r.tokens)?;
                    r.old_logp = forward_trace(&cur, &tr)
                        .iter()
                        .zip(&tr.steps)
                        .map(|(c, s)| c.logp[s.2])
                        .collect();
                }
                let adv: Vec<f64> = batch.iter().map(|r| r.reward - baseline).collect();
                ppo_update(g, &mut cur, &reference, &batch, &adv, cfg, &mut opt)?;
            }
        }
        info!("ia round {round}: kept {}/{}", info_round.kept, info_round.sampled);
        rounds.push(info_round);
    }
    Ok((cur, rounds))
}
