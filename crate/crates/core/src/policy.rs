//! Recurrent actor-critic with a trajectory encoder feeding a social latent
//! into the recurrent core.
//!
//! ```text
//! features ─ obs_enc (2×tanh MLP) ─┐
//! prev action one-hot ─────────────┼─ concat ─ GRU ─┬─ actor  → logits
//! privileged e ─ mu (3-layer MLP) ─┘                └─ critic → value
//! ```

use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sda_nn::{checkpoint, kernels, Activation, Dense, Gru, Mlp, ParamStore, Tape, Var};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, SimError};
use crate::sensors::{one_hot, PrivilegedMode, SensorConfig};

/// Discrete velocity commands `(linear m/s, angular rad/s)`.
pub const ACTIONS: [(f64, f64); 9] = [
    (0.0, 0.0),
    (1.0, 0.0),
    (-0.5, 0.0),
    (0.0, PI / 2.0),
    (0.0, -PI / 2.0),
    (1.0, PI / 2.0),
    (1.0, -PI / 2.0),
    (-0.5, PI / 2.0),
    (-0.5, -PI / 2.0),
];
pub const NUM_ACTIONS: usize = ACTIONS.len();
pub const STOP: usize = 0;
pub const FORWARD: usize = 1;
pub const BACKWARD: usize = 2;
pub const TURN_LEFT: usize = 3;
pub const TURN_RIGHT: usize = 4;
pub const FORWARD_LEFT: usize = 5;
pub const FORWARD_RIGHT: usize = 6;
pub const BACKWARD_LEFT: usize = 7;
pub const BACKWARD_RIGHT: usize = 8;

pub fn action_velocity(index: usize) -> (f64, f64) {
    ACTIONS[index]
}

/// Architecture dimensions. Everything here is covered by [`config_hash`](Self::config_hash).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub obs_width: usize,
    pub obs_hidden: usize,
    pub num_actions: usize,
    pub latent_dim: usize,
    pub traj_len: usize,
    pub mode: PrivilegedMode,
    pub gru_hidden: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            obs_width: SensorConfig::default().feature_width(),
            obs_hidden: 128,
            num_actions: NUM_ACTIONS,
            latent_dim: 128,
            traj_len: 20,
            mode: PrivilegedMode::Traj,
            gru_hidden: 256,
        }
    }
}

impl PolicyConfig {
    /// Input width of the trajectory encoder. The zero-latent baseline keeps
    /// a trajectory-width encoder so parameter counts match.
    pub fn privileged_width(&self) -> usize {
        match self.mode {
            PrivilegedMode::None => PrivilegedMode::Traj.width(self.traj_len),
            m => m.width(self.traj_len),
        }
    }

    pub fn gru_input(&self) -> usize {
        self.obs_hidden + self.num_actions + self.latent_dim
    }

    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub logits: Vec<f64>,
    pub value: f64,
    pub hidden: Vec<f64>,
}

pub struct TapeOutput {
    pub logits: Var,
    pub value: Var,
    pub hidden: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub config: PolicyConfig,
    pub params: ParamStore,
    obs_enc: Mlp,
    mu: Mlp,
    gru: Gru,
    actor: Dense,
    critic: Dense,
}

pub const MU_PREFIX: &str = "mu.";

impl Policy {
    pub fn new(config: PolicyConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let c = &config;
        let obs_enc = Mlp::register(
            &mut p,
            "obs_enc",
            &[c.obs_width, c.obs_hidden, c.obs_hidden],
            Activation::Tanh,
            Activation::Tanh,
            &mut rng,
        )?;
        let mu = Mlp::register(
            &mut p,
            "mu",
            &[c.privileged_width(), c.latent_dim, c.latent_dim, c.latent_dim],
            Activation::Tanh,
            Activation::Identity,
            &mut rng,
        )?;
        let gru = Gru::register(&mut p, "gru", c.gru_input(), c.gru_hidden, &mut rng)?;
        let actor = Dense::register(&mut p, "actor", c.gru_hidden, c.num_actions, Activation::Identity, 0.01, &mut rng)?;
        let critic = Dense::register(&mut p, "critic", c.gru_hidden, 1, Activation::Identity, 1.0, &mut rng)?;
        Ok(Self {
            config,
            params: p,
            obs_enc,
            mu,
            gru,
            actor,
            critic,
        })
    }

    /// Binds an existing parameter store (e.g. from a checkpoint).
    pub fn from_params(config: PolicyConfig, params: ParamStore) -> Result<Self> {
        let obs_enc = Mlp::lookup(&params, "obs_enc", 2, Activation::Tanh, Activation::Tanh)?;
        let mu = Mlp::lookup(&params, "mu", 3, Activation::Tanh, Activation::Identity)?;
        let gru = Gru::lookup(&params, "gru")?;
        let actor = Dense::lookup(&params, "actor", Activation::Identity)?;
        let critic = Dense::lookup(&params, "critic", Activation::Identity)?;
        let c = &config;
        let consistent = obs_enc.in_dim() == c.obs_width
            && obs_enc.out_dim() == c.obs_hidden
            && mu.in_dim() == c.privileged_width()
            && mu.out_dim() == c.latent_dim
            && gru.input == c.gru_input()
            && gru.hidden == c.gru_hidden
            && actor.out_dim == c.num_actions
            && critic.out_dim == 1;
        if !consistent {
            return Err(SimError::contract("parameter shapes do not match policy config"));
        }
        Ok(Self {
            config,
            params,
            obs_enc,
            mu,
            gru,
            actor,
            critic,
        })
    }

    pub fn initial_hidden(&self) -> Vec<f64> {
        vec![0.0; self.config.gru_hidden]
    }

    pub fn uses_latent(&self) -> bool {
        self.config.mode != PrivilegedMode::None
    }

    pub fn encode_obs(&self, features: &[f64]) -> Result<Vec<f64>> {
        Ok(self.obs_enc.forward(&self.params, features)?)
    }

    /// `z = μ(e)`.
    pub fn encode_trajectory(&self, privileged: &[f64]) -> Result<Vec<f64>> {
        Ok(self.mu.forward(&self.params, privileged)?)
    }

    /// Latent the policy acts on: `μ(e)`, or zeros in the no-privilege mode.
    pub fn latent(&self, privileged: &[f64]) -> Result<Vec<f64>> {
        if self.uses_latent() {
            self.encode_trajectory(privileged)
        } else {
            Ok(vec![0.0; self.config.latent_dim])
        }
    }

    /// One recurrent step from pre-encoded observation features.
    pub fn step_encoded(
        &self,
        hidden: &[f64],
        encoded: &[f64],
        prev_action: usize,
        z: &[f64],
    ) -> Result<PolicyOutput> {
        if z.len() != self.config.latent_dim {
            return Err(SimError::domain(format!(
                "latent width {} != {}",
                z.len(),
                self.config.latent_dim
            )));
        }
        let mut input = Vec::with_capacity(self.config.gru_input());
        input.extend_from_slice(encoded);
        input.extend(one_hot(prev_action, self.config.num_actions));
        input.extend_from_slice(z);
        let h = self.gru.forward(&self.params, &input, hidden)?;
        let logits = self.actor.forward(&self.params, &h)?;
        let value = self.critic.forward(&self.params, &h)?[0];
        Ok(PolicyOutput {
            logits,
            value,
            hidden: h,
        })
    }

    /// `π(x_t, a_{t−1}, z_t)`: logits, value and the next hidden state.
    pub fn policy_step(
        &self,
        hidden: &[f64],
        features: &[f64],
        prev_action: usize,
        z: &[f64],
    ) -> Result<PolicyOutput> {
        let enc = self.encode_obs(features)?;
        self.step_encoded(hidden, &enc, prev_action, z)
    }

    pub fn latent_tape(&self, tape: &mut Tape, privileged: &[f64]) -> Result<Var> {
        if self.uses_latent() {
            let e = tape.constant(privileged.to_vec());
            Ok(self.mu.forward_tape(tape, e)?)
        } else {
            Ok(tape.constant(vec![0.0; self.config.latent_dim]))
        }
    }

    pub fn step_tape(
        &self,
        tape: &mut Tape,
        hidden: Var,
        features: &[f64],
        prev_action: usize,
        z: Var,
    ) -> Result<TapeOutput> {
        let x = tape.constant(features.to_vec());
        let enc = self.obs_enc.forward_tape(tape, x)?;
        let a = tape.constant(one_hot(prev_action, self.config.num_actions));
        let input = tape.concat(&[enc, a, z]);
        let h = self.gru.forward_tape(tape, input, hidden)?;
        let logits = self.actor.forward_tape(tape, h)?;
        let value = self.critic.forward_tape(tape, h)?;
        Ok(TapeOutput {
            logits,
            value,
            hidden: h,
        })
    }

    pub fn config_hash(&self) -> String {
        self.config.config_hash()
    }

    /// Descriptive manifest metadata: observation layout and action table.
    pub fn manifest_meta(&self, extra: serde_json::Value) -> serde_json::Value {
        serde_json::json!({
            "kind": "policy",
            "policy_config": self.config,
            "observation_layout": {
                "features": format!(
                    "depth[0..{}] normalized ranges, then [visible, bearing/pi, distance/max_range, angular_size]",
                    self.config.obs_width.saturating_sub(crate::sensors::DETECTION_WIDTH)
                ),
                "prev_action": "one-hot over the action table",
            },
            "action_table": ACTIONS.iter().enumerate()
                .map(|(i, (v, w))| serde_json::json!({"index": i, "lin_vel": v, "ang_vel": w}))
                .collect::<Vec<_>>(),
            "extra": extra,
        })
    }

    pub fn save(&self, path: &std::path::Path, extra: serde_json::Value) -> Result<()> {
        checkpoint::save(path, &self.params, &self.config_hash(), self.manifest_meta(extra))?;
        Ok(())
    }

    /// Loads a policy checkpoint; the architecture comes from the manifest.
    pub fn load(path: &std::path::Path) -> Result<(Self, serde_json::Value)> {
        let (params, manifest) = checkpoint::load(path, None)?;
        if manifest.meta.get("kind").and_then(|k| k.as_str()) != Some("policy") {
            return Err(SimError::contract(format!("{} is not a policy checkpoint", path.display())));
        }
        let config: PolicyConfig = serde_json::from_value(manifest.meta["policy_config"].clone())?;
        if config.config_hash() != manifest.config_hash {
            return Err(SimError::contract("policy manifest config does not match its hash"));
        }
        let extra = manifest.meta["extra"].clone();
        Ok((Self::from_params(config, params)?, extra))
    }
}

/// Softmax-categorical draw; returns the index and its log-probability.
pub fn sample_action<R: Rng + ?Sized>(logits: &[f64], rng: &mut R) -> Result<(usize, f64)> {
    if logits.is_empty() || logits.iter().any(|v| !v.is_finite()) {
        return Err(SimError::numerical(format!("non-finite logits {logits:?}")));
    }
    let logp = kernels::log_softmax(logits);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, lp) in logp.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return Ok((i, *lp));
        }
    }
    // rounding left u beyond the accumulated mass: take the last positive entry
    let i = logp
        .iter()
        .rposition(|lp| lp.exp() > 0.0)
        .unwrap_or(logp.len() - 1);
    Ok((i, logp[i]))
}

/// Argmax with ties broken toward the lowest index.
pub fn greedy_action(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in logits.iter().enumerate() {
        if *v > logits[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    kernels::log_softmax(logits).iter().map(|v| v.exp()).collect()
}
