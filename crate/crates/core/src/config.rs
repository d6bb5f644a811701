//! Merged run configuration shared by every pipeline command.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{EnvConfig, Protocol};
use crate::error::{Result, SimError};
use crate::policy::PolicyConfig;
use crate::ppo::PpoConfig;
use crate::scenegen::SceneGenConfig;
use crate::sensors::PrivilegedMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage2Config {
    pub total_steps: usize,
    pub num_envs: usize,
    pub rollout_len: usize,
    pub lr: f64,
    pub epochs: usize,
    pub minibatch: usize,
    /// Episodes used for the held-out MSE before and after training.
    pub holdout_episodes: usize,
    pub blocks: usize,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            total_steps: 200_000,
            num_envs: 16,
            rollout_len: 128,
            lr: 1e-3,
            epochs: 2,
            minibatch: 256,
            holdout_episodes: 8,
            blocks: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub episodes: usize,
    pub seeds: Vec<u64>,
    /// Argmax actions instead of sampling.
    pub greedy: bool,
    /// Training steps between evaluation rows in the Stage-1 metrics CSV.
    pub eval_every: usize,
    /// Episodes per evaluation row during training.
    pub train_eval_episodes: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 100,
            seeds: vec![0, 1, 2],
            greedy: false,
            eval_every: 100_000,
            train_eval_episodes: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub scenes: SceneGenConfig,
    pub train_scenes: usize,
    pub eval_scenes: usize,
    pub env: EnvConfig,
    pub policy: PolicyConfig,
    pub ppo: PpoConfig,
    pub stage2: Stage2Config,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scenes: SceneGenConfig::default(),
            train_scenes: 64,
            eval_scenes: 16,
            env: EnvConfig::default(),
            policy: PolicyConfig::default(),
            ppo: PpoConfig::default(),
            stage2: Stage2Config::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut c: RunConfig = serde_json::from_str(text)?;
        c.sync();
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Copies the settings that several sections share from their owner.
    pub fn sync(&mut self) {
        self.env.traj_len = self.policy.traj_len;
        self.env.privileged = self.policy.mode;
        self.policy.obs_width = self.env.sensors.feature_width();
    }

    pub fn with_mode(mut self, mode: PrivilegedMode) -> Self {
        self.policy.mode = mode;
        self.sync();
        self
    }

    pub fn with_traj_len(mut self, n: usize) -> Self {
        self.policy.traj_len = n;
        self.sync();
        self
    }

    pub fn with_protocol(mut self, p: Protocol) -> Self {
        self.env.episode.protocol = p;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.scenes.validate()?;
        self.env.body.validate()?;
        self.ppo.validate()?;
        if self.train_scenes == 0 || self.eval_scenes == 0 {
            return Err(SimError::domain("need at least one training and one evaluation scene"));
        }
        if self.policy.traj_len == 0 {
            return Err(SimError::domain("trajectory length must be positive"));
        }
        if self.env.traj_len != self.policy.traj_len || self.env.privileged != self.policy.mode {
            return Err(SimError::contract("environment and policy disagree on the privileged input"));
        }
        if self.policy.obs_width != self.env.sensors.feature_width() {
            return Err(SimError::contract("policy observation width does not match the sensors"));
        }
        let s2 = &self.stage2;
        if s2.num_envs == 0 || s2.rollout_len == 0 || s2.minibatch == 0 || s2.epochs == 0 || !(s2.lr > 0.0) {
            return Err(SimError::domain("stage-2 sizes and learning rate must be positive"));
        }
        if self.eval.episodes == 0 || self.eval.seeds.is_empty() {
            return Err(SimError::domain("evaluation needs episodes and at least one seed"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON form.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_round_trips() {
        let mut c = RunConfig::default();
        c.sync();
        c.validate().unwrap();
        let back = RunConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.config_hash(), c.config_hash());
    }

    #[test]
    fn hash_tracks_changes() {
        let a = RunConfig::default();
        let b = RunConfig {
            seed: 1,
            ..RunConfig::default()
        };
        assert_ne!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c = RunConfig::from_json(r#"{"seed": 4, "policy": {"mode": "hgps"}}"#).unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.env.privileged, PrivilegedMode::Hgps);
        assert!(RunConfig::from_json(r#"{"ppo": {"clip": 2.0}}"#).is_err());
    }
}
