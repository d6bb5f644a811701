//! Small environments for checking the learner in isolation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{EpisodeOutcome, Environment, Frame, Step};
use crate::error::{Result, SimError};
use crate::policy::NUM_ACTIONS;

/// One state, one-step episodes: action 0 pays 1, everything else 0.
#[derive(Debug, Clone)]
pub struct BanditEnv {
    num_actions: usize,
}

impl BanditEnv {
    pub fn new(num_actions: usize) -> Self {
        Self { num_actions }
    }
}

impl Default for BanditEnv {
    fn default() -> Self {
        Self::new(NUM_ACTIONS)
    }
}

impl Environment for BanditEnv {
    fn reset(&mut self) -> Result<Frame> {
        Ok(Frame {
            features: vec![1.0],
            privileged: Vec::new(),
        })
    }

    fn step(&mut self, action: usize) -> Result<Step> {
        if action >= self.num_actions {
            return Err(SimError::domain(format!("action {action} out of range")));
        }
        let reward = if action == 0 { 1.0 } else { 0.0 };
        Ok(Step {
            frame: self.reset()?,
            reward,
            done: true,
            outcome: Some(EpisodeOutcome {
                total_reward: reward,
                length: 1,
                success: action == 0,
            }),
        })
    }

    fn num_actions(&self) -> usize {
        self.num_actions
    }
}

/// 5×5 grid with a fixed goal in the far corner. Actions 1–4 move
/// +x, −x, +y, −y; the rest stay put. The observation is the one-hot cell.
#[derive(Debug, Clone)]
pub struct GridToyEnv {
    pub size: usize,
    pub goal: (usize, usize),
    pub max_steps: usize,
    pos: (usize, usize),
    t: usize,
    total: f64,
    rng: ChaCha8Rng,
}

impl GridToyEnv {
    pub fn new(seed: u64) -> Self {
        Self {
            size: 5,
            goal: (4, 4),
            max_steps: 24,
            pos: (0, 0),
            t: 0,
            total: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn feature_width(&self) -> usize {
        self.size * self.size
    }

    fn frame(&self) -> Frame {
        let mut f = vec![0.0; self.feature_width()];
        f[self.pos.1 * self.size + self.pos.0] = 1.0;
        Frame {
            features: f,
            privileged: Vec::new(),
        }
    }
}

impl Environment for GridToyEnv {
    fn reset(&mut self) -> Result<Frame> {
        loop {
            let p = (self.rng.random_range(0..self.size), self.rng.random_range(0..self.size));
            if p != self.goal {
                self.pos = p;
                break;
            }
        }
        self.t = 0;
        self.total = 0.0;
        Ok(self.frame())
    }

    fn step(&mut self, action: usize) -> Result<Step> {
        if action >= NUM_ACTIONS {
            return Err(SimError::domain(format!("action {action} out of range")));
        }
        let (x, y) = self.pos;
        let last = self.size - 1;
        self.pos = match action {
            1 => ((x + 1).min(last), y),
            2 => (x.saturating_sub(1), y),
            3 => (x, (y + 1).min(last)),
            4 => (x, y.saturating_sub(1)),
            _ => (x, y),
        };
        self.t += 1;
        let reached = self.pos == self.goal;
        let reward = if reached { 1.0 } else { -0.01 };
        self.total += reward;
        let done = reached || self.t >= self.max_steps;
        Ok(Step {
            frame: self.frame(),
            reward,
            done,
            outcome: done.then_some(EpisodeOutcome {
                total_reward: self.total,
                length: self.t,
                success: reached,
            }),
        })
    }

    fn num_actions(&self) -> usize {
        NUM_ACTIONS
    }
}
