//! Finite-difference checks of the composed graphs, the brute-force GAE
//! oracle, surrogate hand cases and the at-snapshot importance ratio.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sda_core::adapter::{Adapter, AdapterConfig};
use sda_core::env::{EnvConfig, SocialNavEnv, World};
use sda_core::policy::{Policy, PolicyConfig};
use sda_core::ppo::{clipped_loss, clipped_surrogate, compute_gae, recompute_ratios, PpoConfig, PpoTrainer};
use sda_core::scenegen::{generate_split, SceneGenConfig};
use sda_core::sensors::PrivilegedMode;
use sda_nn::{ParamStore, Tape, Var};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs().max(n.abs())).max(1e-6)
}

fn check<F>(store: &mut ParamStore, build: F) -> f64
where
    F: Fn(&mut Tape) -> Var,
{
    let analytic = {
        let mut tape = Tape::new(store);
        let loss = build(&mut tape);
        tape.backward(loss).unwrap()
    };
    let loss_at = |s: &ParamStore| {
        let mut tape = Tape::new(s);
        let l = build(&mut tape);
        tape.scalar_value(l)
    };
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    let mut worst: f64 = 0.0;
    for id in ids {
        for k in 0..store.get(id).len() {
            let orig = store.value(id)[k];
            store.value_mut(id)[k] = orig + H;
            let up = loss_at(store);
            store.value_mut(id)[k] = orig - H;
            let down = loss_at(store);
            store.value_mut(id)[k] = orig;
            worst = worst.max(rel_err(analytic.get(id)[k], (up - down) / (2.0 * H)));
        }
    }
    worst
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn tiny_policy(mode: PrivilegedMode, seed: u64) -> Policy {
    let cfg = PolicyConfig {
        obs_width: 3,
        obs_hidden: 4,
        num_actions: 3,
        latent_dim: 3,
        traj_len: 2,
        mode,
        gru_hidden: 4,
    };
    Policy::new(cfg, seed).unwrap()
}

#[test]
fn full_policy_graph_matches_finite_differences() {
    for seed in 0..100u64 {
        let mode = [PrivilegedMode::Traj, PrivilegedMode::Both][seed as usize % 2];
        let policy = tiny_policy(mode, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + seed);
        let mut store = policy.params.clone();
        let e = random_vec(&mut rng, policy.config.privileged_width());
        let x1 = random_vec(&mut rng, 3);
        let x2 = random_vec(&mut rng, 3);
        let (a1, a2) = (rng.random_range(0..3usize), rng.random_range(0..3usize));
        let ret = rng.random_range(-1.0..1.0);
        let err = check(&mut store, |t| {
            let z = policy.latent_tape(t, &e).unwrap();
            let h = t.constant(policy.initial_hidden());
            let o1 = policy.step_tape(t, h, &x1, 0, z).unwrap();
            let o2 = policy.step_tape(t, o1.hidden, &x2, a1, z).unwrap();
            let lp = t.log_softmax(o2.logits);
            let pick = t.pick(lp, a2).unwrap();
            let v = t.offset(o2.value, -ret);
            let v = t.square(v);
            let v = t.sum(v);
            let v = t.scale(v, 0.5);
            let l1 = t.log_softmax(o1.logits);
            let p1 = t.exp(l1);
            let ent = t.mul(p1, l1);
            let ent = t.sum(ent);
            let ent = t.scale(ent, 0.01);
            let s = t.add(pick, v);
            t.add(s, ent)
        });
        assert!(err < TOL, "seed {seed}: rel err {err}");
    }
}

#[test]
fn mixer_adapter_matches_finite_differences() {
    for seed in 0..100u64 {
        let cfg = AdapterConfig {
            window: 3,
            feature_width: 2,
            num_actions: 2,
            blocks: 2,
            latent_dim: 3,
        };
        let adapter = Adapter::new(cfg.clone(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(20_000 + seed);
        let mut store = adapter.params.clone();
        let w = random_vec(&mut rng, cfg.input_width());
        let target = random_vec(&mut rng, cfg.latent_dim);
        let err = check(&mut store, |t| {
            let zh = adapter.forward_tape(t, &w).unwrap();
            let z = t.constant(target.clone());
            let d = t.sub(zh, z);
            let d = t.square(d);
            t.sum(d)
        });
        assert!(err < TOL, "seed {seed}: rel err {err}");
    }
}

/// Direct sum `Â_t = Σ_l (γλ)^l δ_{t+l}`, truncated at the first terminal.
fn gae_brute_force(r: &[f64], v: &[f64], d: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = r.len();
    (0..n)
        .map(|t| {
            let mut total = 0.0;
            let mut w = 1.0;
            for k in t..n {
                let live = if d[k] { 0.0 } else { 1.0 };
                total += w * (r[k] + gamma * live * v[k + 1] - v[k]);
                if d[k] {
                    break;
                }
                w *= gamma * lambda;
            }
            total
        })
        .collect()
}

#[test]
fn gae_matches_brute_force_oracle() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 50;
        let r = random_vec(&mut rng, n);
        let v = random_vec(&mut rng, n + 1);
        let d: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.1).collect();
        let (adv, ret) = compute_gae(&r, &v, &d, 0.99, 0.95).unwrap();
        let oracle = gae_brute_force(&r, &v, &d, 0.99, 0.95);
        for t in 0..n {
            assert!((adv[t] - oracle[t]).abs() < 1e-10, "t={t}: {} vs {}", adv[t], oracle[t]);
            assert!((ret[t] - (oracle[t] + v[t])).abs() < 1e-10);
        }
    }
}

#[test]
fn gae_single_step_is_td_error() {
    let (adv, _) = compute_gae(&[1.0], &[0.5, 2.0], &[false], 0.9, 0.95).unwrap();
    assert!((adv[0] - (1.0 + 0.9 * 2.0 - 0.5)).abs() < 1e-15);
    let (adv, _) = compute_gae(&[1.0], &[0.5, 2.0], &[true], 0.9, 0.95).unwrap();
    assert_eq!(adv[0], 0.5);
}

#[test]
fn surrogate_hand_cases() {
    let eps = 0.2;
    // unclipped interior
    assert_eq!(clipped_surrogate(1.0, 2.0, eps), 2.0);
    assert_eq!(clipped_surrogate(1.1, 1.0, eps), 1.1);
    // positive advantage caps at 1 + ε
    assert_eq!(clipped_surrogate(1.5, 1.0, eps), 1.2);
    // negative advantage keeps the pessimistic (unclipped) term above 1 + ε
    assert_eq!(clipped_surrogate(1.5, -1.0, eps), -1.5);
    // negative advantage caps at 1 − ε below the band
    assert_eq!(clipped_surrogate(0.5, -1.0, eps), -0.8);
    // positive advantage below the band is not clipped
    assert_eq!(clipped_surrogate(0.5, 1.0, eps), 0.5);
    let l = clipped_loss(&[0.0, 0.0], &[0.0, 0.0], &[1.0, -3.0], eps);
    assert_eq!(l, 1.0);
}

#[test]
fn ratios_are_one_at_the_snapshot() {
    let env_cfg = EnvConfig::default();
    let scenes = generate_split(0, 2, &SceneGenConfig::default()).unwrap();
    let worlds = Arc::new(scenes.into_iter().map(|s| World::new(s, &env_cfg.body)).collect::<Vec<_>>());
    let pcfg = PolicyConfig {
        obs_hidden: 16,
        latent_dim: 8,
        gru_hidden: 16,
        ..PolicyConfig::default()
    };
    let policy = Policy::new(pcfg, 3).unwrap();
    let cfg = PpoConfig {
        num_envs: 2,
        rollout_len: 40,
        ..PpoConfig::default()
    };
    let envs = (0..2).map(|i| SocialNavEnv::new(env_cfg.clone(), worlds.clone(), i).unwrap()).collect();
    let mut trainer = PpoTrainer::new(policy, envs, cfg, 5).unwrap();
    let (segments, _) = trainer.collect().unwrap();
    for seg in &segments {
        for r in recompute_ratios(&trainer.policy, seg).unwrap() {
            assert!((r - 1.0).abs() < 1e-10, "ratio {r}");
        }
    }
}
