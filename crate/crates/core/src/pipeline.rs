//! Stage-1 and Stage-2 training drivers.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sda_nn::Adam;
use sda_nn::AdamConfig;
use serde::{Deserialize, Serialize};

use crate::adapter::{adapter_loss, batch_grads, Adapter, AdapterConfig};
use crate::config::RunConfig;
use crate::env::{EnvConfig, Environment, Frame, SocialNavEnv, World};
use crate::error::{Result, SimError};
use crate::eval::{evaluate_seed, Agent, AgentSpec, LatentSource, MetricSummary, PolicyAgent};
use crate::policy::Policy;
use crate::ppo::PpoTrainer;
use crate::scenegen::{generate_split, EVAL_SEED_BASE};
use crate::sensors::PrivilegedMode;
use crate::sim::Scene;

/// Parameter-name prefixes of everything Stage 2 keeps frozen.
pub const FROZEN_PREFIXES: [&str; 5] = ["obs_enc.", "mu.", "gru.", "actor.", "critic."];

pub fn to_worlds(scenes: Vec<Scene>, env: &EnvConfig) -> Arc<Vec<World>> {
    Arc::new(scenes.into_iter().map(|s| World::new(s, &env.body)).collect())
}

/// Generated training and evaluation splits for `cfg`.
pub fn default_worlds(cfg: &RunConfig) -> Result<(Arc<Vec<World>>, Arc<Vec<World>>)> {
    let train = generate_split(0, cfg.train_scenes, &cfg.scenes)?;
    let eval = generate_split(EVAL_SEED_BASE, cfg.eval_scenes, &cfg.scenes)?;
    Ok((to_worlds(train, &cfg.env), to_worlds(eval, &cfg.env)))
}

/// Latent source a Stage-1 policy is evaluated with.
pub fn stage1_source(policy: &Policy) -> LatentSource {
    if policy.uses_latent() {
        LatentSource::Privileged
    } else {
        LatentSource::Zero
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub mean_return: f64,
    pub summary: MetricSummary,
}

pub fn metrics_csv_header(config_hash: &str, seed: u64) -> String {
    format!("# config_hash={config_hash},seed={seed}\nstep,mean_return,S,SPS,F,CR,ES\n")
}

pub fn metrics_csv_row(r: &MetricsRow) -> String {
    let s = &r.summary;
    format!("{},{},{},{},{},{},{}\n", r.step, r.mean_return, s.s, s.sps, s.f, s.cr, s.es)
}

pub struct Stage1Outcome {
    pub policy: Policy,
    pub rows: Vec<MetricsRow>,
    pub checkpoint: Option<PathBuf>,
    pub metrics_csv: String,
}

/// Trains π and μ jointly with PPO, writing `policy.ckpt`, `metrics.csv` and
/// `config.json` into `out_dir` when given.
pub fn run_stage1(
    cfg: &RunConfig,
    train: Arc<Vec<World>>,
    eval: Arc<Vec<World>>,
    out_dir: Option<&Path>,
) -> Result<Stage1Outcome> {
    cfg.validate()?;
    let hash = cfg.config_hash();
    let policy = Policy::new(cfg.policy.clone(), cfg.seed)?;
    let mut env_cfg = cfg.env.clone();
    env_cfg.privileged = cfg.policy.mode;
    let envs = (0..cfg.ppo.num_envs)
        .map(|i| SocialNavEnv::new(env_cfg.clone(), train.clone(), cfg.seed.wrapping_mul(7919).wrapping_add(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let mut trainer = PpoTrainer::new(policy, envs, cfg.ppo, cfg.seed)?;

    let mut csv = metrics_csv_header(&hash, cfg.seed);
    let mut rows = Vec::new();
    let mut returns = Vec::new();
    let mut next_eval = cfg.eval.eval_every.max(1);
    let per_iter = cfg.ppo.steps_per_iteration();
    let iterations = cfg.ppo.total_steps.div_ceil(per_iter).max(1);
    for it in 0..iterations {
        let report = trainer.iterate().map_err(|e| match e {
            SimError::Numerical(m) => SimError::Numerical(format!("stage 1 at step {}: {m}", trainer.steps())),
            other => other,
        })?;
        returns.extend(report.outcomes.iter().map(|o| o.total_reward));
        let last = it + 1 == iterations;
        if report.steps >= next_eval || last {
            while next_eval <= report.steps {
                next_eval += cfg.eval.eval_every.max(1);
            }
            let spec = AgentSpec::Policy {
                policy: Arc::new(trainer.policy.clone()),
                source: stage1_source(&trainer.policy),
                greedy: cfg.eval.greedy,
            };
            let r = evaluate_seed(&spec, &eval, &cfg.env, cfg.seed, cfg.eval.train_eval_episodes, &hash, false)?;
            let mean_return = if returns.is_empty() {
                0.0
            } else {
                returns.iter().sum::<f64>() / returns.len() as f64
            };
            returns.clear();
            let row = MetricsRow {
                step: report.steps,
                mean_return,
                summary: r.summary,
            };
            csv.push_str(&metrics_csv_row(&row));
            rows.push(row);
            if let Some(dir) = out_dir {
                std::fs::create_dir_all(dir)?;
                std::fs::write(dir.join("metrics.csv"), &csv)?;
            }
        }
    }
    let policy = trainer.into_policy();
    let mut checkpoint = None;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("metrics.csv"), &csv)?;
        std::fs::write(dir.join("config.json"), cfg.to_json())?;
        let path = dir.join("policy.ckpt");
        policy.save(
            &path,
            serde_json::json!({"seed": cfg.seed, "run_config_hash": hash, "steps": cfg.ppo.total_steps}),
        )?;
        checkpoint = Some(path);
    }
    Ok(Stage1Outcome {
        policy,
        rows,
        checkpoint,
        metrics_csv: csv,
    })
}

/// Hashes of each frozen parameter group.
pub fn frozen_hashes(policy: &Policy) -> Vec<(String, String)> {
    FROZEN_PREFIXES
        .iter()
        .map(|p| (p.to_string(), policy.params.prefix_hash(p)))
        .collect()
}

/// One step of Stage-2 data: the window the deployed adapter saw, the latent
/// it produced and acted on, and the teacher latent `μ(e)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterSample {
    pub window: Vec<f64>,
    pub acting: Vec<f64>,
    pub teacher: Vec<f64>,
}

struct Stage2Worker {
    env: SocialNavEnv,
    agent: PolicyAgent,
    frame: Frame,
    rng: ChaCha8Rng,
}

impl Stage2Worker {
    fn new(policy: Arc<Policy>, adapter: Arc<Adapter>, env: SocialNavEnv, seed: u64) -> Result<Self> {
        let mut env = env;
        let frame = env.reset()?;
        let mut agent = PolicyAgent::new(policy, LatentSource::Adapter(adapter), false)?;
        agent.begin();
        Ok(Self {
            env,
            agent,
            frame,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    fn set_adapter(&mut self, adapter: Arc<Adapter>) {
        self.agent.source = LatentSource::Adapter(adapter);
    }

    /// Acts on `ẑ` for `len` steps and records the teacher latent each step.
    fn collect(&mut self, len: usize) -> Result<Vec<AdapterSample>> {
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            let teacher = self.agent.policy.encode_trajectory(&self.frame.privileged)?;
            let (action, latent) = self.agent.act(&self.env, &self.frame, &mut self.rng)?;
            out.push(AdapterSample {
                window: self.agent.last_window().to_vec(),
                acting: latent.expect("adapter agents report their latent"),
                teacher,
            });
            let step = self.env.step(action)?;
            if step.done {
                self.frame = self.env.reset()?;
                self.agent.begin();
            } else {
                self.frame = step.frame;
            }
        }
        Ok(out)
    }
}

/// Mean `‖ψ(window) − μ(e)‖²` over on-policy rollouts of held-out episodes.
pub fn heldout_mse(
    policy: &Arc<Policy>,
    adapter: &Arc<Adapter>,
    worlds: &Arc<Vec<World>>,
    env_cfg: &EnvConfig,
    seed: u64,
    episodes: usize,
) -> Result<f64> {
    let per_episode: Vec<(f64, usize)> = (0..episodes)
        .into_par_iter()
        .map(|i| {
            let s = crate::eval::episode_seed(seed, i);
            let mut env = SocialNavEnv::new(env_cfg.clone(), worlds.clone(), s)?;
            let mut frame = env.reset_with_seed(s)?;
            let mut agent = PolicyAgent::new(policy.clone(), LatentSource::Adapter(adapter.clone()), false)?;
            agent.begin();
            let mut rng = ChaCha8Rng::seed_from_u64(s ^ 0x0dd_ba11);
            let (mut sum, mut n) = (0.0, 0usize);
            loop {
                let teacher = policy.encode_trajectory(&frame.privileged)?;
                let (a, z) = agent.act(&env, &frame, &mut rng)?;
                sum += adapter_loss(&z.expect("adapter latent"), &teacher);
                n += 1;
                let step = env.step(a)?;
                if step.done {
                    break;
                }
                frame = step.frame;
            }
            Ok((sum, n))
        })
        .collect::<Result<_>>()?;
    let (sum, n) = per_episode.iter().fold((0.0, 0), |(s, n), (a, b)| (s + a, n + b));
    Ok(sum / n.max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Report {
    pub initial_heldout_mse: f64,
    pub final_heldout_mse: f64,
    pub frozen_before: Vec<(String, String)>,
    pub frozen_after: Vec<(String, String)>,
    pub steps: usize,
    /// Every training window was produced while acting on the adapter's own
    /// latent (checked sample by sample).
    pub on_policy: bool,
}

pub struct Stage2Outcome {
    pub adapter: Adapter,
    pub report: Stage2Report,
    pub checkpoint: Option<PathBuf>,
    pub metrics_csv: String,
}

/// Trains ψ to regress the frozen `μ(e)` while the frozen policy acts on `ψ`'s
/// own estimate. Writes `adapter.ckpt` and `stage2.csv` when `out_dir` is set.
pub fn run_stage2(
    cfg: &RunConfig,
    policy: Policy,
    train: Arc<Vec<World>>,
    heldout: Arc<Vec<World>>,
    out_dir: Option<&Path>,
) -> Result<Stage2Outcome> {
    cfg.validate()?;
    if !policy.uses_latent() {
        return Err(SimError::contract("stage 2 needs a policy trained with a privileged latent"));
    }
    let hash = cfg.config_hash();
    let s2 = &cfg.stage2;
    let policy = Arc::new(policy);
    let frozen_before = frozen_hashes(&policy);
    let acfg = AdapterConfig {
        window: policy.config.traj_len,
        feature_width: policy.config.obs_hidden,
        num_actions: policy.config.num_actions,
        blocks: s2.blocks,
        latent_dim: policy.config.latent_dim,
    };
    let mut adapter = Adapter::new(acfg, cfg.seed ^ 0xada9)?;
    let mut env_cfg = cfg.env.clone();
    env_cfg.privileged = policy.config.mode;
    let holdout_seed = cfg.seed.wrapping_add(EVAL_SEED_BASE);
    let initial = heldout_mse(&policy, &Arc::new(adapter.clone()), &heldout, &env_cfg, holdout_seed, s2.holdout_episodes)?;

    let mut adam = Adam::new(&adapter.params, AdamConfig::with_lr(s2.lr));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5747e2);
    let snapshot = Arc::new(adapter.clone());
    let mut workers = (0..s2.num_envs)
        .map(|i| {
            let seed = cfg.seed.wrapping_mul(104_729).wrapping_add(i as u64);
            let env = SocialNavEnv::new(env_cfg.clone(), train.clone(), seed)?;
            Stage2Worker::new(policy.clone(), snapshot.clone(), env, seed ^ 0xac7)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut csv = format!("# config_hash={hash},seed={}\nstep,train_mse\n", cfg.seed);
    let mut steps = 0;
    let mut on_policy = true;
    while steps < s2.total_steps {
        let snapshot = Arc::new(adapter.clone());
        for w in &mut workers {
            w.set_adapter(snapshot.clone());
        }
        let batches: Vec<Vec<AdapterSample>> = workers
            .par_iter_mut()
            .map(|w| w.collect(s2.rollout_len))
            .collect::<Result<_>>()?;
        let samples: Vec<AdapterSample> = batches.into_iter().flatten().collect();
        steps += samples.len();
        // the acting latent must be exactly what the snapshot produces
        for s in &samples {
            on_policy &= snapshot.forward(&s.window)? == s.acting;
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut loss_sum = 0.0;
        let mut batches_run = 0;
        for _ in 0..s2.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(s2.minibatch) {
                let ws: Vec<&[f64]> = chunk.iter().map(|&i| samples[i].window.as_slice()).collect();
                let zs: Vec<&[f64]> = chunk.iter().map(|&i| samples[i].teacher.as_slice()).collect();
                let (loss, grads) = batch_grads(&adapter, &ws, &zs)?;
                if !loss.is_finite() || !grads.is_finite() {
                    return Err(SimError::numerical(format!("stage 2 at step {steps}: non-finite adapter loss {loss}")));
                }
                adam.step(&mut adapter.params, &grads)?;
                loss_sum += loss;
                batches_run += 1;
            }
        }
        let _ = writeln!(csv, "{steps},{}", loss_sum / batches_run.max(1) as f64);
    }
    let adapter_arc = Arc::new(adapter.clone());
    let final_mse = heldout_mse(&policy, &adapter_arc, &heldout, &env_cfg, holdout_seed, s2.holdout_episodes)?;
    let frozen_after = frozen_hashes(&policy);
    let report = Stage2Report {
        initial_heldout_mse: initial,
        final_heldout_mse: final_mse,
        frozen_before,
        frozen_after,
        steps,
        on_policy,
    };
    let _ = writeln!(csv, "# heldout_mse initial={initial} final={final_mse}");
    let mut checkpoint = None;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("stage2.csv"), &csv)?;
        let path = dir.join("adapter.ckpt");
        adapter.save(
            &path,
            &policy.config_hash(),
            serde_json::json!({
                "seed": cfg.seed,
                "run_config_hash": hash,
                "policy_params_hash": policy.params.content_hash(),
                "report": report,
            }),
        )?;
        checkpoint = Some(path);
    }
    Ok(Stage2Outcome {
        adapter,
        report,
        checkpoint,
        metrics_csv: csv,
    })
}

/// Loads an adapter and checks it was trained against exactly `policy`.
pub fn load_adapter_for(path: &Path, policy: &Policy) -> Result<Adapter> {
    let (adapter, policy_hash, extra) = Adapter::load(path)?;
    if policy_hash != policy.config_hash() {
        return Err(SimError::contract(format!(
            "adapter {} was trained for policy config {policy_hash}, not {}",
            path.display(),
            policy.config_hash()
        )));
    }
    if let Some(h) = extra.get("policy_params_hash").and_then(|v| v.as_str()) {
        if h != policy.params.content_hash() {
            return Err(SimError::contract("adapter was trained against different policy weights"));
        }
    }
    Ok(adapter)
}

/// The environment config an evaluation of `mode` needs.
pub fn eval_env(cfg: &RunConfig, mode: PrivilegedMode) -> EnvConfig {
    let mut e = cfg.env.clone();
    e.privileged = mode;
    e
}
