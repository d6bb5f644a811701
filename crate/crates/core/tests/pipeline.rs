//! Stage-1 and Stage-2 plumbing on a tiny configuration.

use sda_core::config::RunConfig;
use sda_core::pipeline::{default_worlds, frozen_hashes, load_adapter_for, run_stage1, run_stage2};
use sda_core::policy::Policy;
use sda_core::sensors::PrivilegedMode;

fn tiny() -> RunConfig {
    let mut c = RunConfig {
        seed: 3,
        train_scenes: 2,
        eval_scenes: 2,
        ..RunConfig::default()
    };
    c.policy.obs_hidden = 16;
    c.policy.latent_dim = 8;
    c.policy.gru_hidden = 16;
    c.ppo.num_envs = 2;
    c.ppo.rollout_len = 32;
    c.ppo.total_steps = 128;
    c.eval.eval_every = 64;
    c.eval.train_eval_episodes = 2;
    c.stage2.num_envs = 2;
    c.stage2.rollout_len = 32;
    c.stage2.minibatch = 32;
    c.stage2.total_steps = 128;
    c.stage2.holdout_episodes = 2;
    c.env.episode.max_steps = 60;
    c.sync();
    c
}

#[test]
fn stage1_is_deterministic_and_trains_the_encoder() {
    let cfg = tiny();
    let (train, eval) = default_worlds(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let a = run_stage1(&cfg, train.clone(), eval.clone(), Some(dir.path())).unwrap();
    let b = run_stage1(&cfg, train, eval, None).unwrap();
    assert_eq!(a.metrics_csv, b.metrics_csv);
    assert_eq!(a.policy.params.content_hash(), b.policy.params.content_hash());
    assert_eq!(a.rows.len(), 2);
    let header = format!("# config_hash={},seed=3\n", cfg.config_hash());
    assert!(a.metrics_csv.starts_with(&header));
    assert_eq!(std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap(), a.metrics_csv);

    let init = Policy::new(cfg.policy.clone(), cfg.seed).unwrap();
    assert_ne!(init.params.prefix_hash("mu."), a.policy.params.prefix_hash("mu."));
    let (loaded, extra) = Policy::load(&dir.path().join("policy.ckpt")).unwrap();
    assert_eq!(loaded, a.policy);
    assert_eq!(extra["seed"], 3);
}

#[test]
fn stage2_freezes_the_policy_and_stays_on_policy() {
    let cfg = tiny();
    let (train, eval) = default_worlds(&cfg).unwrap();
    let s1 = run_stage1(&cfg, train.clone(), eval.clone(), None).unwrap();
    let before = frozen_hashes(&s1.policy);
    let dir = tempfile::tempdir().unwrap();
    let a = run_stage2(&cfg, s1.policy.clone(), train.clone(), eval.clone(), Some(dir.path())).unwrap();
    let b = run_stage2(&cfg, s1.policy.clone(), train, eval, None).unwrap();
    assert_eq!(a.metrics_csv, b.metrics_csv);
    assert_eq!(a.report.frozen_before, before);
    assert_eq!(a.report.frozen_after, before);
    assert!(a.report.on_policy);
    assert!(a.report.initial_heldout_mse.is_finite() && a.report.final_heldout_mse.is_finite());

    let adapter = load_adapter_for(&dir.path().join("adapter.ckpt"), &s1.policy).unwrap();
    assert_eq!(adapter, a.adapter);
    let other = Policy::new(cfg.policy.clone(), 99).unwrap();
    assert!(load_adapter_for(&dir.path().join("adapter.ckpt"), &other).is_err());
}

#[test]
fn stage2_rejects_a_baseline_policy() {
    let cfg = tiny().with_mode(PrivilegedMode::None);
    let (train, eval) = default_worlds(&cfg).unwrap();
    let policy = Policy::new(cfg.policy.clone(), 0).unwrap();
    assert!(run_stage2(&cfg, policy, train, eval, None).is_err());
}
