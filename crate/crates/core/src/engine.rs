//! The reinforcement-learning engine.
//!
//! Each iteration collects a batch of sampled trajectories against a frozen
//! policy snapshot, scores them with the terminal reward, converts the
//! scalar reward into per-token advantages (terminal-reward TD errors,
//! exponentially weighted accumulation, then batch normalization), and runs
//! several epochs of clipped policy and value updates with a KL penalty
//! against the frozen reference table.
//!
//! Rewards enter only the final TD error; returns are built from the *raw*
//! advantages while the policy loss consumes the normalized ones.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::analysis::{evaluate, overconfidence, threshold_key, EvalRow};
use crate::config::CcrlConfig;
use crate::env::{check_answer, Problem};
use crate::error::{CcrlError, Result};
use crate::policy::{
    apply_actor_gradient, clip_gradient, gradient_norm, logit_gradient_pg, sample_trajectory,
    ContextKey, GradientMap, PolicyState, Trajectory,
};
use crate::reward::{extract_answer, outcome_reward, total_reward, RewardBreakdown};
use crate::rng::rng_stream;
use crate::vocab::Vocabulary;

/// Which reward shapes the run: the full calibrated reward, or the
/// outcome-only ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Ccrl,
    OutcomeOnly,
}

/// TD errors for a trajectory that earns a single terminal reward: the
/// last step compares the reward against its value estimate, every other
/// step only chains discounted value estimates.
pub fn td_errors(values: &[f64], terminal_reward: f64, gamma: f64) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(CcrlError::InvalidInput("empty value vector".into()));
    }
    let last = values.len() - 1;
    Ok(values
        .iter()
        .enumerate()
        .map(|(t, &v)| {
            if t == last {
                terminal_reward - v
            } else {
                gamma * values[t + 1] - v
            }
        })
        .collect())
}

/// Backward-recursion advantage accumulation; equals the closed-form
/// `sum_k (gamma*lam)^k td[t+k]`.
pub fn gae_advantages(td: &[f64], gamma: f64, lam: f64) -> Vec<f64> {
    let mut advantages = vec![0.0; td.len()];
    let mut acc = 0.0;
    for t in (0..td.len()).rev() {
        acc = td[t] + gamma * lam * acc;
        advantages[t] = acc;
    }
    advantages
}

/// Population-statistics normalization over the whole batch (all tokens of
/// all trajectories concatenated). A constant vector maps to zeros.
pub fn normalize_advantages(advantages: &[f64], eps: f64) -> Vec<f64> {
    if advantages.is_empty() {
        return Vec::new();
    }
    let n = advantages.len() as f64;
    let mean = advantages.iter().sum::<f64>() / n;
    let var = advantages.iter().map(|&a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    advantages.iter().map(|&a| (a - mean) / (std + eps)).collect()
}

/// Clipped-ratio surrogate loss. Returns the loss and a per-token mask
/// marking ratios that left the `[1-eps, 1+eps]` interval.
pub fn ppo_policy_loss(
    new_logprobs: &[f64],
    old_logprobs: &[f64],
    advantages: &[f64],
    eps_clip: f64,
) -> Result<(f64, Vec<bool>)> {
    if new_logprobs.len() != old_logprobs.len() || new_logprobs.len() != advantages.len() {
        return Err(CcrlError::InvalidInput(format!(
            "ppo_policy_loss length mismatch: {} new, {} old, {} advantages",
            new_logprobs.len(),
            old_logprobs.len(),
            advantages.len()
        )));
    }
    if new_logprobs.is_empty() {
        return Err(CcrlError::InvalidInput("ppo_policy_loss of no tokens".into()));
    }
    let mut total = 0.0;
    let mut mask = Vec::with_capacity(new_logprobs.len());
    for ((nl, ol), &a) in new_logprobs.iter().zip(old_logprobs).zip(advantages) {
        let ratio = (nl - ol).exp();
        let clipped = ratio.clamp(1.0 - eps_clip, 1.0 + eps_clip);
        total += (ratio * a).min(clipped * a);
        mask.push(ratio < 1.0 - eps_clip || ratio > 1.0 + eps_clip);
    }
    Ok((-total / new_logprobs.len() as f64, mask))
}

/// Pessimistic clipped value loss: the clipped estimate may move at most
/// `eps_clip` away from the stale value, and the larger squared error wins.
pub fn clipped_value_loss(v_new: &[f64], v_old: &[f64], returns: &[f64], eps_clip: f64) -> f64 {
    assert_eq!(v_new.len(), v_old.len());
    assert_eq!(v_new.len(), returns.len());
    assert!(!v_new.is_empty());
    let mut total = 0.0;
    for ((&v, &vo), &r) in v_new.iter().zip(v_old).zip(returns) {
        let v_clip = vo + (v - vo).clamp(-eps_clip, eps_clip);
        total += (v - r).powi(2).max((v_clip - r).powi(2));
    }
    total / v_new.len() as f64
}

/// Sample-based reference penalty: the mean log-probability gap between
/// the current policy and the frozen reference on the realized tokens.
pub fn kl_penalty(new_logprobs: &[f64], ref_logprobs: &[f64]) -> f64 {
    assert_eq!(new_logprobs.len(), ref_logprobs.len());
    assert!(!new_logprobs.is_empty());
    let total: f64 = new_logprobs
        .iter()
        .zip(ref_logprobs)
        .map(|(n, r)| n - r)
        .sum();
    total / new_logprobs.len() as f64
}

/// One collected batch with its advantage bookkeeping.
#[derive(Debug, Clone)]
pub struct RolloutBatch {
    pub trajectories: Vec<Trajectory>,
    pub problem_indices: Vec<usize>,
    pub rewards: Vec<RewardBreakdown>,
    pub td_errors: Vec<Vec<f64>>,
    pub advantages_raw: Vec<Vec<f64>>,
    pub advantages_norm: Vec<Vec<f64>>,
    pub returns: Vec<Vec<f64>>,
}

impl RolloutBatch {
    pub fn token_count(&self) -> usize {
        self.trajectories.iter().map(|t| t.len()).sum()
    }

    pub fn mean_reward(&self) -> f64 {
        if self.rewards.is_empty() {
            return 0.0;
        }
        self.rewards.iter().map(|r| r.total).sum::<f64>() / self.rewards.len() as f64
    }
}

fn score_trajectory(
    trajectory: &Trajectory,
    problem: &Problem,
    vocab: &Vocabulary,
    config: &CcrlConfig,
    mode: TrainMode,
) -> Result<RewardBreakdown> {
    match mode {
        TrainMode::Ccrl => total_reward(&trajectory.tokens, &trajectory.dists, problem, vocab, config),
        TrainMode::OutcomeOnly => {
            let answer = extract_answer(&trajectory.tokens, vocab)?;
            let answer_correct = check_answer(problem, answer);
            let outcome = outcome_reward(answer_correct, config);
            Ok(RewardBreakdown {
                outcome,
                confidence: 0.0,
                total: outcome + 0.0,
                answer_correct,
            })
        }
    }
}

/// Sample `batch_size` trajectories (problems drawn uniformly), score them,
/// and compute TD errors, advantages, batch normalization, and returns.
pub fn collect_batch<R: rand::Rng + ?Sized>(
    state: &PolicyState,
    problems: &[Problem],
    vocab: &Vocabulary,
    config: &CcrlConfig,
    mode: TrainMode,
    max_len: u32,
    problem_rng: &mut R,
    rollout_rng: &mut R,
) -> Result<RolloutBatch> {
    if problems.is_empty() {
        return Err(CcrlError::InvalidInput("empty problem set".into()));
    }
    let mut trajectories = Vec::with_capacity(config.batch_size as usize);
    let mut problem_indices = Vec::with_capacity(config.batch_size as usize);
    let mut rewards = Vec::with_capacity(config.batch_size as usize);
    for _ in 0..config.batch_size {
        let index = problem_rng.random_range(0..problems.len());
        let trajectory = sample_trajectory(state, &problems[index], vocab, rollout_rng, max_len);
        let reward = score_trajectory(&trajectory, &problems[index], vocab, config, mode)?;
        trajectories.push(trajectory);
        problem_indices.push(index);
        rewards.push(reward);
    }

    let mut td_all = Vec::with_capacity(trajectories.len());
    let mut adv_raw = Vec::with_capacity(trajectories.len());
    for (trajectory, reward) in trajectories.iter().zip(&rewards) {
        let td = td_errors(&trajectory.values, reward.total, config.gamma)?;
        let adv = gae_advantages(&td, config.gamma, config.lam);
        td_all.push(td);
        adv_raw.push(adv);
    }

    let flat: Vec<f64> = adv_raw.iter().flat_map(|a| a.iter().copied()).collect();
    let flat_norm = normalize_advantages(&flat, config.eps_norm);
    let mut adv_norm = Vec::with_capacity(adv_raw.len());
    let mut cursor = 0;
    for adv in &adv_raw {
        adv_norm.push(flat_norm[cursor..cursor + adv.len()].to_vec());
        cursor += adv.len();
    }

    let returns: Vec<Vec<f64>> = adv_raw
        .iter()
        .zip(&trajectories)
        .map(|(adv, trajectory)| {
            adv.iter()
                .zip(&trajectory.values)
                .map(|(a, v)| a + v)
                .collect()
        })
        .collect();

    Ok(RolloutBatch {
        trajectories,
        problem_indices,
        rewards,
        td_errors: td_all,
        advantages_raw: adv_raw,
        advantages_norm: adv_norm,
        returns,
    })
}

/// Losses and diagnostics for one update epoch, measured before the
/// parameters moved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_policy: f64,
    pub l_value: f64,
    pub l_kl: f64,
    pub l_actor: f64,
    pub l_critic: f64,
    pub actor_grad_norm: f64,
    pub critic_grad_norm: f64,
    pub clip_fraction: f64,
}

/// One epoch: evaluate the current policy on the frozen batch, take a
/// clipped actor step and a clipped critic step.
pub fn epoch_update(
    state: &mut PolicyState,
    batch: &RolloutBatch,
    config: &CcrlConfig,
) -> Result<LossReport> {
    let token_count = batch.token_count();
    if token_count == 0 {
        return Err(CcrlError::InvalidInput("batch holds no tokens".into()));
    }
    let m = token_count as f64;

    // Fresh per-token log-probabilities and values under the current state.
    let mut new_logprobs: Vec<Vec<f64>> = Vec::with_capacity(batch.trajectories.len());
    let mut new_values: Vec<Vec<f64>> = Vec::with_capacity(batch.trajectories.len());
    for trajectory in &batch.trajectories {
        let mut lps = Vec::with_capacity(trajectory.len());
        let mut vals = Vec::with_capacity(trajectory.len());
        for (t, key) in trajectory.keys.iter().enumerate() {
            let dist = crate::policy::action_distribution(state, key);
            lps.push(dist.log_prob(trajectory.tokens[t].index()));
            vals.push(state.value(key));
        }
        new_logprobs.push(lps);
        new_values.push(vals);
    }

    let flat =
        |per_traj: &[Vec<f64>]| -> Vec<f64> { per_traj.iter().flatten().copied().collect() };
    let new_lp_flat = flat(&new_logprobs);
    let old_lp_flat: Vec<f64> = batch
        .trajectories
        .iter()
        .flat_map(|t| t.logprobs.iter().copied())
        .collect();
    let ref_lp_flat: Vec<f64> = batch
        .trajectories
        .iter()
        .flat_map(|t| t.ref_logprobs.iter().copied())
        .collect();
    let adv_flat = flat(&batch.advantages_norm);
    let v_new_flat = flat(&new_values);
    let v_old_flat: Vec<f64> = batch
        .trajectories
        .iter()
        .flat_map(|t| t.values.iter().copied())
        .collect();
    let returns_flat = flat(&batch.returns);

    let (l_policy, clip_mask) =
        ppo_policy_loss(&new_lp_flat, &old_lp_flat, &adv_flat, config.eps_clip)?;
    let l_value = clipped_value_loss(&v_new_flat, &v_old_flat, &returns_flat, config.eps_clip);
    let l_kl = kl_penalty(&new_lp_flat, &ref_lp_flat);
    let l_actor = l_policy + config.beta_kl * l_kl;
    let l_critic = l_value;
    let clip_fraction = clip_mask.iter().filter(|&&c| c).count() as f64 / m;

    // Actor gradient: per-token coefficient on (p - onehot). The clipped
    // surrogate contributes advantage * ratio where the unclipped branch is
    // active and nothing elsewhere; the KL penalty contributes -beta_kl to
    // every realized token.
    let mut actor_grad = GradientMap::new();
    let mut flat_index = 0usize;
    for (trajectory, new_lps) in batch.trajectories.iter().zip(&new_logprobs) {
        let mut coefficients = Vec::with_capacity(trajectory.len());
        for (t, &new_lp) in new_lps.iter().enumerate() {
            let a = adv_flat[flat_index];
            let ratio = (new_lp - trajectory.logprobs[t]).exp();
            let clipped = ratio.clamp(1.0 - config.eps_clip, 1.0 + config.eps_clip);
            let unclipped_active = ratio * a <= clipped * a;
            let surrogate_coeff = if unclipped_active { a * ratio } else { 0.0 };
            coefficients.push((surrogate_coeff - config.beta_kl) / m);
            flat_index += 1;
        }
        let grad = logit_gradient_pg(state, trajectory, &coefficients)?;
        for (key, g) in grad {
            let entry = actor_grad
                .entry(key)
                .or_insert_with(|| vec![0.0; state.vocab_len()]);
            for (acc, gi) in entry.iter_mut().zip(g) {
                *acc += gi;
            }
        }
    }
    let actor_grad_norm = gradient_norm(&actor_grad);
    clip_gradient(&mut actor_grad, config.grad_clip_norm);

    // Critic gradient: the squared error flows only while the unclipped
    // branch dominates; a value pushed beyond the clip band is frozen.
    let mut critic_grad: BTreeMap<ContextKey, f64> = BTreeMap::new();
    let mut cursor = 0usize;
    for (trajectory, vals) in batch.trajectories.iter().zip(&new_values) {
        for (t, &v) in vals.iter().enumerate() {
            let v_old = trajectory.values[t];
            let r = returns_flat[cursor + t];
            let v_clip = v_old + (v - v_old).clamp(-config.eps_clip, config.eps_clip);
            let g = if (v - r).powi(2) >= (v_clip - r).powi(2) {
                2.0 * (v - r) / m
            } else {
                0.0
            };
            if g != 0.0 {
                *critic_grad.entry(trajectory.keys[t]).or_insert(0.0) += g;
            }
        }
        cursor += trajectory.len();
    }
    let critic_grad_norm = critic_grad.values().map(|g| g * g).sum::<f64>().sqrt();
    if critic_grad_norm > config.grad_clip_norm && critic_grad_norm > 0.0 {
        let scale = config.grad_clip_norm / critic_grad_norm;
        for g in critic_grad.values_mut() {
            *g *= scale;
        }
    }

    apply_actor_gradient(state, &actor_grad, config.learning_rate_actor);
    if config.learning_rate_critic != 0.0 {
        for (key, g) in &critic_grad {
            *state.phi.entry(*key).or_insert(0.0) -= config.learning_rate_critic * g;
        }
    }

    Ok(LossReport {
        l_policy,
        l_value,
        l_kl,
        l_actor,
        l_critic,
        actor_grad_norm,
        critic_grad_norm,
        clip_fraction,
    })
}

/// Run the configured number of update epochs against one frozen batch.
pub fn update_from_batch(
    state: &mut PolicyState,
    batch: &RolloutBatch,
    config: &CcrlConfig,
) -> Result<Vec<LossReport>> {
    let mut reports = Vec::with_capacity(config.ppo_epochs as usize);
    for _ in 0..config.ppo_epochs {
        reports.push(epoch_update(state, batch, config)?);
    }
    Ok(reports)
}

/// Loop controls that live outside the config file.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub iterations: u32,
    pub max_len: u32,
    /// Abort when the mean absolute actor logit exceeds this bound.
    pub divergence_bound: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            iterations: 200,
            max_len: 12,
            divergence_bound: 50.0,
        }
    }
}

/// One line of the training trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: u32,
    pub mean_reward: f64,
    pub accuracy: f64,
    pub l_policy: f64,
    pub l_value: f64,
    pub l_kl: f64,
    pub clip_fraction: f64,
    pub overconf: BTreeMap<String, Option<f64>>,
}

/// Trace plus the final greedy evaluation.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub trace: Vec<IterationRecord>,
    pub final_rows: Vec<EvalRow>,
}

/// The full training loop. Deterministic given the config seed: problem
/// picks and rollouts come from dedicated labelled streams, and the update
/// order follows the collected batch. Every iteration appends one trace
/// record carrying epoch-averaged losses and a greedy evaluation snapshot.
pub fn train(
    config: &CcrlConfig,
    problems: &[Problem],
    vocab: &Vocabulary,
    state: &mut PolicyState,
    mode: TrainMode,
    options: &TrainOptions,
) -> Result<TrainOutput> {
    config.validate()?;
    if problems.is_empty() {
        return Err(CcrlError::InvalidInput("empty problem set".into()));
    }
    if state.reference_theta.is_empty() {
        state.freeze_reference();
    }
    let mut problem_rng = rng_stream(config.seed, "batch");
    let mut rollout_rng = rng_stream(config.seed, "rollout");
    let mut trace = Vec::with_capacity(options.iterations as usize);

    for iter in 0..options.iterations {
        let batch = collect_batch(
            state,
            problems,
            vocab,
            config,
            mode,
            options.max_len,
            &mut problem_rng,
            &mut rollout_rng,
        )?;
        let reports = update_from_batch(state, &batch, config)?;
        let n = reports.len() as f64;
        let mean = |f: fn(&LossReport) -> f64| reports.iter().map(f).sum::<f64>() / n;

        let mean_abs = state.mean_abs_logit();
        if mean_abs > options.divergence_bound {
            return Err(CcrlError::Diverged(format!(
                "iteration {iter}: mean |logit| {mean_abs:.3} exceeds bound {}",
                options.divergence_bound
            )));
        }

        let (report, rows) = evaluate(state, problems, vocab, options.max_len)?;
        let over = overconfidence(
            &rows
                .iter()
                .map(|r| (r.correct, r.confidence))
                .collect::<Vec<_>>(),
            &config.thresholds,
        );
        trace.push(IterationRecord {
            iter,
            mean_reward: batch.mean_reward(),
            accuracy: report.accuracy,
            l_policy: mean(|r| r.l_policy),
            l_value: mean(|r| r.l_value),
            l_kl: mean(|r| r.l_kl),
            clip_fraction: mean(|r| r.clip_fraction),
            overconf: config
                .thresholds
                .iter()
                .map(|&t| (threshold_key(t), over.rates[&threshold_key(t)]))
                .collect(),
        });
    }

    let (_, final_rows) = evaluate(state, problems, vocab, options.max_len)?;
    Ok(TrainOutput { trace, final_rows })
}

/// Serialize a trace as JSONL, one record per iteration.
pub fn trace_to_jsonl(trace: &[IterationRecord]) -> Result<String> {
    let mut out = String::new();
    for record in trace {
        out.push_str(&serde_json::to_string(record)?);
        out.push('\n');
    }
    Ok(out)
}

/// Parse a JSONL trace.
pub fn trace_from_jsonl(text: &str) -> Result<Vec<IterationRecord>> {
    let mut trace = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: IterationRecord = serde_json::from_str(line).map_err(|e| {
            CcrlError::InvalidInput(format!("trace line {}: {e}", line_no + 1))
        })?;
        trace.push(record);
    }
    Ok(trace)
}
