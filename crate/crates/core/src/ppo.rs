//! Synchronous multi-environment PPO for the recurrent policy.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sda_nn::{Adam, AdamConfig, Grads, Tape};
use serde::{Deserialize, Serialize};

use crate::env::{EpisodeOutcome, Environment, Frame};
use crate::error::{Result, SimError};
use crate::policy::{sample_action, Policy, STOP};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub clip: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub lr: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub num_envs: usize,
    pub rollout_len: usize,
    pub total_steps: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            gamma: 0.99,
            lambda: 0.95,
            epochs: 2,
            minibatches: 2,
            lr: 2.5e-4,
            value_coef: 0.5,
            entropy_coef: 0.01,
            max_grad_norm: 0.5,
            num_envs: 16,
            rollout_len: 128,
            total_steps: 2_000_000,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let unit_open = |v: f64| v > 0.0 && v < 1.0;
        let unit_half = |v: f64| v > 0.0 && v <= 1.0;
        if !unit_open(self.clip) {
            return Err(SimError::domain(format!("clip {} not in (0,1)", self.clip)));
        }
        if !unit_half(self.gamma) || !unit_half(self.lambda) {
            return Err(SimError::domain("gamma and lambda must lie in (0,1]"));
        }
        if self.epochs == 0 || self.minibatches == 0 || self.num_envs == 0 || self.rollout_len == 0 {
            return Err(SimError::domain("epochs, minibatches, num_envs and rollout_len must be positive"));
        }
        if self.minibatches > self.num_envs {
            return Err(SimError::domain("minibatches are split by environment; need minibatches <= num_envs"));
        }
        if !(self.lr > 0.0 && self.max_grad_norm > 0.0) {
            return Err(SimError::domain("lr and max_grad_norm must be positive"));
        }
        Ok(())
    }

    pub fn steps_per_iteration(&self) -> usize {
        self.num_envs * self.rollout_len
    }
}

/// Raw GAE advantages and returns. `values` carries one bootstrap entry past
/// the end; `dones[t]` marks that the episode ended after step `t`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n + 1 || dones.len() != n {
        return Err(SimError::domain(format!(
            "gae lengths: rewards {n}, values {}, dones {}",
            values.len(),
            dones.len()
        )));
    }
    let mut adv = vec![0.0; n];
    let mut next = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * values[t + 1] * live - values[t];
        next = delta + gamma * lambda * live * next;
        adv[t] = next;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Shifts and scales to zero mean and unit (population) std.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    for a in adv.iter_mut() {
        *a = (*a - mean) / std;
    }
}

/// Per-sample clipped surrogate `min(r·A, clip(r, 1−ε, 1+ε)·A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage)
}

/// `−mean(surrogate)` over a batch of log-probabilities.
pub fn clipped_loss(logp_new: &[f64], logp_old: &[f64], adv: &[f64], clip: f64) -> f64 {
    let n = logp_new.len().max(1) as f64;
    -logp_new
        .iter()
        .zip(logp_old)
        .zip(adv)
        .map(|((a, b), x)| clipped_surrogate((a - b).exp(), *x, clip))
        .sum::<f64>()
        / n
}

/// One environment's contiguous slice of a rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    /// GRU state before the first step.
    pub h0: Vec<f64>,
    pub features: Vec<Vec<f64>>,
    pub privileged: Vec<Vec<f64>>,
    pub prev_actions: Vec<usize>,
    /// Step `t` begins a new episode (hidden state resets to zero).
    pub starts: Vec<bool>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub bootstrap: f64,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Per-environment rollout state.
struct Worker<E> {
    env: E,
    frame: Frame,
    hidden: Vec<f64>,
    prev_action: usize,
    fresh: bool,
    rng: ChaCha8Rng,
}

impl<E: Environment> Worker<E> {
    fn rollout(&mut self, policy: &Policy, len: usize) -> Result<(Segment, Vec<EpisodeOutcome>)> {
        let mut seg = Segment {
            h0: self.hidden.clone(),
            features: Vec::with_capacity(len),
            privileged: Vec::with_capacity(len),
            prev_actions: Vec::with_capacity(len),
            starts: Vec::with_capacity(len),
            actions: Vec::with_capacity(len),
            log_probs: Vec::with_capacity(len),
            values: Vec::with_capacity(len),
            rewards: Vec::with_capacity(len),
            dones: Vec::with_capacity(len),
            bootstrap: 0.0,
            advantages: Vec::new(),
            returns: Vec::new(),
        };
        let mut outcomes = Vec::new();
        for _ in 0..len {
            let z = policy.latent(&self.frame.privileged)?;
            let out = policy.policy_step(&self.hidden, &self.frame.features, self.prev_action, &z)?;
            let (action, logp) = sample_action(&out.logits, &mut self.rng)?;
            let step = self.env.step(action)?;
            seg.features.push(std::mem::take(&mut self.frame.features));
            seg.privileged.push(std::mem::take(&mut self.frame.privileged));
            seg.prev_actions.push(self.prev_action);
            seg.starts.push(self.fresh);
            seg.actions.push(action);
            seg.log_probs.push(logp);
            seg.values.push(out.value);
            seg.rewards.push(step.reward);
            seg.dones.push(step.done);
            if step.done {
                outcomes.extend(step.outcome);
                self.frame = self.env.reset()?;
                self.hidden = policy.initial_hidden();
                self.prev_action = STOP;
                self.fresh = true;
            } else {
                self.frame = step.frame;
                self.hidden = out.hidden;
                self.prev_action = action;
                self.fresh = false;
            }
        }
        let z = policy.latent(&self.frame.privileged)?;
        seg.bootstrap = policy
            .policy_step(&self.hidden, &self.frame.features, self.prev_action, &z)?
            .value;
        Ok((seg, outcomes))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub grad_norm: f64,
    pub minibatch_updates: usize,
}

/// Loss pieces and gradients of one segment under the current parameters.
struct SegmentPass {
    grads: Grads,
    surrogate_sum: f64,
    value_sq_sum: f64,
    entropy_sum: f64,
    ratio_sum: f64,
    clipped: usize,
    kl_sum: f64,
}

/// Replays `seg` from its stored hidden state and differentiates
/// `(−Σ surr + c_v Σ (V−R)² − c_e Σ H) / n` where `n` is the minibatch size.
fn segment_pass(policy: &Policy, seg: &Segment, cfg: &PpoConfig, n: f64) -> Result<SegmentPass> {
    let mut tape = Tape::new(&policy.params);
    let mut h = tape.constant(seg.h0.clone());
    let mut logps = Vec::with_capacity(seg.len());
    let mut values = Vec::with_capacity(seg.len());
    let mut entropies = Vec::with_capacity(seg.len());
    for t in 0..seg.len() {
        if seg.starts[t] {
            h = tape.constant(policy.initial_hidden());
        }
        let z = policy.latent_tape(&mut tape, &seg.privileged[t])?;
        let out = policy.step_tape(&mut tape, h, &seg.features[t], seg.prev_actions[t], z)?;
        let lsm = tape.log_softmax(out.logits);
        logps.push(tape.pick(lsm, seg.actions[t])?);
        let p = tape.exp(lsm);
        let plogp = tape.mul(p, lsm);
        entropies.push(tape.sum(plogp));
        values.push(out.value);
        h = out.hidden;
    }
    let logp = tape.concat(&logps);
    let value = tape.concat(&values);
    let neg_ent = tape.concat(&entropies);

    let old = tape.constant(seg.log_probs.clone());
    let adv = tape.constant(seg.advantages.clone());
    let ret = tape.constant(seg.returns.clone());
    let diff = tape.sub(logp, old);
    let ratio = tape.exp(diff);
    let unclipped = tape.mul(ratio, adv);
    let bounded = tape.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
    let clipped = tape.mul(bounded, adv);
    let surr = tape.min(unclipped, clipped);
    let surr_sum = tape.sum(surr);
    let verr = tape.sub(value, ret);
    let vsq = tape.square(verr);
    let vsq_sum = tape.sum(vsq);
    let neg_ent_sum = tape.sum(neg_ent);

    let a = tape.scale(surr_sum, -1.0 / n);
    let b = tape.scale(vsq_sum, cfg.value_coef / n);
    let c = tape.scale(neg_ent_sum, cfg.entropy_coef / n);
    let loss = tape.add_all(&[a, b, c]);

    let ratios = tape.value(ratio).to_vec();
    let diffs = tape.value(diff).to_vec();
    let surrogate_sum = tape.scalar_value(surr_sum);
    let value_sq_sum = tape.scalar_value(vsq_sum);
    let entropy_sum = -tape.scalar_value(neg_ent_sum);
    let total = tape.scalar_value(loss);
    if !total.is_finite() {
        return Err(SimError::numerical(format!("non-finite PPO loss {total}")));
    }
    let grads = tape.backward(loss)?;
    Ok(SegmentPass {
        grads,
        surrogate_sum,
        value_sq_sum,
        entropy_sum,
        ratio_sum: ratios.iter().sum(),
        clipped: ratios.iter().filter(|r| (*r - 1.0).abs() > cfg.clip).count(),
        kl_sum: -diffs.iter().sum::<f64>(),
    })
}

/// Importance ratios of every sample under the current parameters.
pub fn recompute_ratios(policy: &Policy, seg: &Segment) -> Result<Vec<f64>> {
    let mut h = seg.h0.clone();
    let mut out = Vec::with_capacity(seg.len());
    for t in 0..seg.len() {
        if seg.starts[t] {
            h = policy.initial_hidden();
        }
        let z = policy.latent(&seg.privileged[t])?;
        let o = policy.policy_step(&h, &seg.features[t], seg.prev_actions[t], &z)?;
        let lsm = sda_nn::kernels::log_softmax(&o.logits);
        out.push((lsm[seg.actions[t]] - seg.log_probs[t]).exp());
        h = o.hidden;
    }
    Ok(out)
}

/// Fills advantages (normalized over the whole batch) and returns.
pub fn prepare_batch(segments: &mut [Segment], cfg: &PpoConfig) -> Result<()> {
    for seg in segments.iter_mut() {
        let mut values = seg.values.clone();
        values.push(seg.bootstrap);
        let (adv, ret) = compute_gae(&seg.rewards, &values, &seg.dones, cfg.gamma, cfg.lambda)?;
        seg.advantages = adv;
        seg.returns = ret;
    }
    let mut all: Vec<f64> = segments.iter().flat_map(|s| s.advantages.iter().copied()).collect();
    normalize_advantages(&mut all);
    let mut it = all.into_iter();
    for seg in segments.iter_mut() {
        for a in seg.advantages.iter_mut() {
            *a = it.next().expect("advantage count");
        }
    }
    Ok(())
}

/// Epochs × minibatches of clipped-objective updates. Minibatches partition
/// the segments (whole environments), shuffled by `rng`.
pub fn ppo_update(
    policy: &mut Policy,
    adam: &mut Adam,
    segments: &[Segment],
    cfg: &PpoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats> {
    let mut stats = UpdateStats::default();
    let mut samples = 0usize;
    let mut order: Vec<usize> = (0..segments.len()).collect();
    let mb = cfg.minibatches.min(segments.len()).max(1);
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in 0..mb {
            let idx: Vec<usize> = order.iter().copied().skip(chunk).step_by(mb).collect();
            let n: usize = idx.iter().map(|&i| segments[i].len()).sum();
            if n == 0 {
                continue;
            }
            let passes: Vec<SegmentPass> = idx
                .par_iter()
                .map(|&i| segment_pass(policy, &segments[i], cfg, n as f64))
                .collect::<Result<_>>()?;
            let mut grads = Grads::zeros_like(&policy.params);
            for p in &passes {
                grads.add_assign(&p.grads);
                stats.policy_loss -= p.surrogate_sum;
                stats.value_loss += p.value_sq_sum;
                stats.entropy += p.entropy_sum;
                stats.mean_ratio += p.ratio_sum;
                stats.clip_fraction += p.clipped as f64;
                stats.approx_kl += p.kl_sum;
            }
            samples += n;
            if !grads.is_finite() {
                return Err(SimError::numerical("non-finite gradient in PPO update"));
            }
            stats.grad_norm += grads.clip_global_norm(cfg.max_grad_norm);
            adam.step(&mut policy.params, &grads)?;
            stats.minibatch_updates += 1;
        }
    }
    let s = samples.max(1) as f64;
    stats.policy_loss /= s;
    stats.value_loss /= s;
    stats.entropy /= s;
    stats.mean_ratio /= s;
    stats.clip_fraction /= s;
    stats.approx_kl /= s;
    stats.grad_norm /= stats.minibatch_updates.max(1) as f64;
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationReport {
    pub steps: usize,
    pub outcomes: Vec<EpisodeOutcome>,
    pub stats: UpdateStats,
}

pub struct PpoTrainer<E> {
    pub policy: Policy,
    pub config: PpoConfig,
    adam: Adam,
    workers: Vec<Worker<E>>,
    rng: ChaCha8Rng,
    steps: usize,
}

impl<E: Environment> PpoTrainer<E> {
    /// One worker per environment; sampling streams derive from `seed`.
    pub fn new(policy: Policy, envs: Vec<E>, config: PpoConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if envs.len() != config.num_envs {
            return Err(SimError::contract(format!(
                "{} environments for num_envs {}",
                envs.len(),
                config.num_envs
            )));
        }
        let mut master = ChaCha8Rng::seed_from_u64(seed);
        let mut workers = Vec::with_capacity(envs.len());
        for mut env in envs {
            if env.num_actions() != policy.config.num_actions {
                return Err(SimError::contract("environment and policy disagree on the action count"));
            }
            let frame = env.reset()?;
            workers.push(Worker {
                env,
                frame,
                hidden: policy.initial_hidden(),
                prev_action: STOP,
                fresh: true,
                rng: ChaCha8Rng::seed_from_u64(rand::Rng::random(&mut master)),
            });
        }
        let adam = Adam::new(&policy.params, AdamConfig::with_lr(config.lr));
        Ok(Self {
            policy,
            config,
            adam,
            workers,
            rng: ChaCha8Rng::seed_from_u64(rand::Rng::random(&mut master)),
            steps: 0,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Rolls every worker forward `rollout_len` steps against the current
    /// parameters.
    pub fn collect(&mut self) -> Result<(Vec<Segment>, Vec<EpisodeOutcome>)> {
        let policy = &self.policy;
        let len = self.config.rollout_len;
        let results: Vec<(Segment, Vec<EpisodeOutcome>)> = self
            .workers
            .par_iter_mut()
            .map(|w| w.rollout(policy, len))
            .collect::<Result<_>>()?;
        self.steps += len * results.len();
        let mut segments = Vec::with_capacity(results.len());
        let mut outcomes = Vec::new();
        for (s, o) in results {
            segments.push(s);
            outcomes.extend(o);
        }
        Ok((segments, outcomes))
    }

    pub fn update(&mut self, segments: &mut [Segment]) -> Result<UpdateStats> {
        prepare_batch(segments, &self.config)?;
        ppo_update(&mut self.policy, &mut self.adam, segments, &self.config, &mut self.rng)
    }

    pub fn iterate(&mut self) -> Result<IterationReport> {
        let (mut segments, outcomes) = self.collect()?;
        let stats = self.update(&mut segments)?;
        Ok(IterationReport {
            steps: self.steps,
            outcomes,
            stats,
        })
    }

    pub fn into_policy(self) -> Policy {
        self.policy
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gae_telescopes_without_discount() {
        let (adv, ret) = compute_gae(&[1.0, 1.0], &[0.0, 0.0, 0.0], &[false, false], 1.0, 1.0).unwrap();
        assert_eq!(adv, vec![2.0, 1.0]);
        assert_eq!(ret, vec![2.0, 1.0]);
    }

    #[test]
    fn gae_zero_inputs() {
        let (adv, _) = compute_gae(&[0.0; 4], &[0.0; 5], &[false; 4], 0.99, 0.95).unwrap();
        assert_eq!(adv, vec![0.0; 4]);
    }

    #[test]
    fn gae_length_mismatch() {
        assert!(compute_gae(&[0.0; 4], &[0.0; 4], &[false; 4], 0.99, 0.95).is_err());
    }

    #[test]
    fn done_cuts_bootstrap() {
        let (adv, _) = compute_gae(&[1.0], &[0.0, 100.0], &[true], 0.99, 0.95).unwrap();
        assert_eq!(adv, vec![1.0]);
    }

    #[test]
    fn surrogate_hand_cases() {
        assert_eq!(clipped_surrogate(1.5, 1.0, 0.2), 1.2);
        assert_eq!(clipped_surrogate(0.5, -1.0, 0.2), -0.8);
        for a in [-3.0, -0.1, 0.0, 0.7, 2.0] {
            assert_eq!(clipped_surrogate(1.0, a, 0.2), a);
        }
        assert_eq!(clipped_loss(&[0.0, 0.0], &[0.0, 0.0], &[1.0, 3.0], 0.2), -2.0);
    }

    #[test]
    fn normalization_moments() {
        let mut a: Vec<f64> = (0..37).map(|i| (i as f64 * 0.37).sin() * 4.0 + 1.0).collect();
        normalize_advantages(&mut a);
        let n = a.len() as f64;
        let mean = a.iter().sum::<f64>() / n;
        let std = (a.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-10);
        assert!((std - 1.0).abs() < 1e-6);
    }

    #[test]
    fn config_validation() {
        assert!(PpoConfig::default().validate().is_ok());
        let bad = PpoConfig {
            clip: 1.0,
            ..PpoConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = PpoConfig {
            gamma: 0.0,
            ..PpoConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
