//! Adapter ψ: an MLP-mixer that regresses the social latent from the robot's
//! own recent encoded observations and actions.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sda_nn::{checkpoint, Activation, Dense, Grads, ParamStore, Tape, Var};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, SimError};
use crate::policy::NUM_ACTIONS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdapterConfig {
    /// History length N.
    pub window: usize,
    /// Width of one encoded observation.
    pub feature_width: usize,
    pub num_actions: usize,
    pub blocks: usize,
    pub latent_dim: usize,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            window: 20,
            feature_width: 128,
            num_actions: NUM_ACTIONS,
            blocks: 3,
            latent_dim: 128,
        }
    }
}

impl AdapterConfig {
    /// Width of one history entry: encoded features then the action one-hot.
    pub fn entry_width(&self) -> usize {
        self.feature_width + self.num_actions
    }

    pub fn input_width(&self) -> usize {
        self.window * self.entry_width()
    }

    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Last N `(encoded observation, action)` entries, oldest first. Entries
/// cover steps `t−N..t−1`; the current step is never included.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryWindow {
    len: usize,
    feature_width: usize,
    num_actions: usize,
    entries: VecDeque<Vec<f64>>,
}

impl HistoryWindow {
    pub fn new(config: &AdapterConfig) -> Self {
        Self {
            len: config.window,
            feature_width: config.feature_width,
            num_actions: config.num_actions,
            entries: VecDeque::with_capacity(config.window),
        }
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn filled(&self) -> usize {
        self.entries.len()
    }

    pub fn push(&mut self, encoded: &[f64], action: usize) -> Result<()> {
        if encoded.len() != self.feature_width {
            return Err(SimError::domain(format!(
                "history entry width {} != {}",
                encoded.len(),
                self.feature_width
            )));
        }
        if action >= self.num_actions {
            return Err(SimError::domain(format!("action {action} out of range")));
        }
        let mut e = Vec::with_capacity(self.feature_width + self.num_actions);
        e.extend_from_slice(encoded);
        e.extend((0..self.num_actions).map(|i| if i == action { 1.0 } else { 0.0 }));
        if self.entries.len() == self.len {
            self.entries.pop_front();
        }
        self.entries.push_back(e);
        Ok(())
    }

    /// Flat `N × (feature_width + num_actions)` matrix, row per step. Missing
    /// leading rows repeat the earliest entry; an empty history is all zeros.
    pub fn read(&self) -> Vec<f64> {
        let width = self.feature_width + self.num_actions;
        let mut out = Vec::with_capacity(self.len * width);
        match self.entries.front() {
            None => out.resize(self.len * width, 0.0),
            Some(first) => {
                for _ in self.entries.len()..self.len {
                    out.extend_from_slice(first);
                }
                for e in &self.entries {
                    out.extend_from_slice(e);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct MixerBlock {
    /// Shared across steps, mixes features (C → C).
    per_step: Dense,
    /// Shared across features, mixes time (N → N).
    per_feature: Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adapter {
    pub config: AdapterConfig,
    pub params: ParamStore,
    blocks: Vec<MixerBlock>,
    head: Dense,
}

impl Adapter {
    pub fn new(config: AdapterConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let (n, c) = (config.window, config.entry_width());
        let mut blocks = Vec::with_capacity(config.blocks);
        for i in 0..config.blocks {
            blocks.push(MixerBlock {
                per_step: Dense::register(&mut p, &format!("mix{i}.step"), c, c, Activation::Tanh, 1.0, &mut rng)?,
                per_feature: Dense::register(&mut p, &format!("mix{i}.time"), n, n, Activation::Tanh, 1.0, &mut rng)?,
            });
        }
        let head = Dense::register(&mut p, "head", n * c, config.latent_dim, Activation::Identity, 1.0, &mut rng)?;
        Ok(Self {
            config,
            params: p,
            blocks,
            head,
        })
    }

    pub fn from_params(config: AdapterConfig, params: ParamStore) -> Result<Self> {
        let (n, c) = (config.window, config.entry_width());
        let mut blocks = Vec::with_capacity(config.blocks);
        for i in 0..config.blocks {
            let b = MixerBlock {
                per_step: Dense::lookup(&params, &format!("mix{i}.step"), Activation::Tanh)?,
                per_feature: Dense::lookup(&params, &format!("mix{i}.time"), Activation::Tanh)?,
            };
            if (b.per_step.in_dim, b.per_step.out_dim, b.per_feature.in_dim, b.per_feature.out_dim) != (c, c, n, n) {
                return Err(SimError::contract(format!("mixer block {i} does not match the adapter config")));
            }
            blocks.push(b);
        }
        let head = Dense::lookup(&params, "head", Activation::Identity)?;
        if head.in_dim != n * c || head.out_dim != config.latent_dim {
            return Err(SimError::contract("adapter head does not match the adapter config"));
        }
        Ok(Self {
            config,
            params,
            blocks,
            head,
        })
    }

    fn check_window(&self, window: &[f64]) -> Result<()> {
        if window.len() != self.config.input_width() {
            return Err(SimError::domain(format!(
                "history window width {} != {}",
                window.len(),
                self.config.input_width()
            )));
        }
        Ok(())
    }

    /// `ẑ = ψ(window)`.
    pub fn forward(&self, window: &[f64]) -> Result<Vec<f64>> {
        self.check_window(window)?;
        let (n, c) = (self.config.window, self.config.entry_width());
        let mut x = window.to_vec();
        for b in &self.blocks {
            let y = b.per_step.forward_rows(&self.params, &x, n)?;
            x.iter_mut().zip(&y).for_each(|(a, d)| *a += d);
            let mut t = sda_nn::kernels::transpose(&x, n, c);
            let y = b.per_feature.forward_rows(&self.params, &t, c)?;
            t.iter_mut().zip(&y).for_each(|(a, d)| *a += d);
            x = sda_nn::kernels::transpose(&t, c, n);
        }
        Ok(self.head.forward(&self.params, &x)?)
    }

    pub fn forward_tape(&self, tape: &mut Tape, window: &[f64]) -> Result<Var> {
        self.check_window(window)?;
        let (n, c) = (self.config.window, self.config.entry_width());
        let mut x = tape.constant(window.to_vec());
        for b in &self.blocks {
            let y = b.per_step.forward_rows_tape(tape, x, n)?;
            x = tape.add(x, y);
            let t = tape.transpose(x, n, c)?;
            let y = b.per_feature.forward_rows_tape(tape, t, c)?;
            let t = tape.add(t, y);
            x = tape.transpose(t, c, n)?;
        }
        Ok(self.head.forward_tape(tape, x)?)
    }

    pub fn config_hash(&self) -> String {
        self.config.config_hash()
    }

    /// Saves ψ together with the hash of the policy it was trained against.
    pub fn save(&self, path: &std::path::Path, policy_hash: &str, extra: serde_json::Value) -> Result<()> {
        let meta = serde_json::json!({
            "kind": "adapter",
            "adapter_config": self.config,
            "policy_config_hash": policy_hash,
            "extra": extra,
        });
        checkpoint::save(path, &self.params, &self.config_hash(), meta)?;
        Ok(())
    }

    /// Loads ψ; returns the adapter and the policy hash it requires.
    pub fn load(path: &std::path::Path) -> Result<(Self, String, serde_json::Value)> {
        let (params, manifest) = checkpoint::load(path, None)?;
        if manifest.meta.get("kind").and_then(|k| k.as_str()) != Some("adapter") {
            return Err(SimError::contract(format!("{} is not an adapter checkpoint", path.display())));
        }
        let config: AdapterConfig = serde_json::from_value(manifest.meta["adapter_config"].clone())?;
        if config.config_hash() != manifest.config_hash {
            return Err(SimError::contract("adapter manifest config does not match its hash"));
        }
        let policy_hash = manifest.meta["policy_config_hash"]
            .as_str()
            .ok_or_else(|| SimError::contract("adapter checkpoint lacks the policy hash"))?
            .to_string();
        let extra = manifest.meta["extra"].clone();
        Ok((Self::from_params(config, params)?, policy_hash, extra))
    }
}

/// `‖ẑ − z‖²` summed over components.
pub fn adapter_loss(z_hat: &[f64], z: &[f64]) -> f64 {
    z_hat.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Mean of [`adapter_loss`] over `(window, target)` pairs, without gradients.
pub fn batch_loss(adapter: &Adapter, windows: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    if windows.len() != targets.len() || windows.is_empty() {
        return Err(SimError::domain("adapter batch needs equally many windows and targets"));
    }
    let total: f64 = windows
        .par_iter()
        .zip(targets)
        .map(|(w, z)| adapter.forward(w).map(|zh| adapter_loss(&zh, z)))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .sum();
    Ok(total / windows.len() as f64)
}

const CHUNK: usize = 8;

/// Mean batch loss and its gradient with respect to ψ. Targets are constants,
/// so nothing outside ψ can receive gradient.
pub fn batch_grads(adapter: &Adapter, windows: &[&[f64]], targets: &[&[f64]]) -> Result<(f64, Grads)> {
    if windows.len() != targets.len() || windows.is_empty() {
        return Err(SimError::domain("adapter batch needs equally many windows and targets"));
    }
    let n = windows.len() as f64;
    let parts: Vec<(f64, Grads)> = windows
        .par_chunks(CHUNK)
        .zip(targets.par_chunks(CHUNK))
        .map(|(ws, zs)| {
            let mut tape = Tape::new(&adapter.params);
            let mut terms = Vec::with_capacity(ws.len());
            for (w, z) in ws.iter().zip(zs) {
                if z.len() != adapter.config.latent_dim {
                    return Err(SimError::domain("target latent width mismatch"));
                }
                let zh = adapter.forward_tape(&mut tape, w)?;
                let zt = tape.constant(z.to_vec());
                let d = tape.sub(zh, zt);
                let sq = tape.square(d);
                terms.push(tape.sum(sq));
            }
            let s = tape.add_all(&terms);
            let loss = tape.scale(s, 1.0 / n);
            let v = tape.scalar_value(loss);
            Ok((v, tape.backward(loss)?))
        })
        .collect::<Result<_>>()?;
    let mut grads = Grads::zeros_like(&adapter.params);
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        grads.add_assign(g);
    }
    Ok((loss, grads))
}
