//! Social-navigation episodes: find a walking humanoid, then follow it at
//! 1–2 m while facing it, without colliding.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::geometry::Point;
use crate::grid::{geodesic_distance, NavGrid};
use crate::humanoid::{step_humanoid, HumanoidScript, TrajectoryBuffer};
use crate::policy::{action_velocity, NUM_ACTIONS, STOP};
use crate::sensors::{humanoid_gps, observe, privileged_vector, Detection, Observation, PrivilegedMode, SensorConfig};
use crate::sim::{check_collision, step_robot, BodyParams, Pose, Scene};

/// What a learner sees each step.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    /// Encoder input (depth + detection for the social task).
    pub features: Vec<f64>,
    /// Privileged vector `e` (empty when the env produces none).
    pub privileged: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub frame: Frame,
    pub reward: f64,
    pub done: bool,
    /// Present on the final step of an episode.
    pub outcome: Option<EpisodeOutcome>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub total_reward: f64,
    pub length: usize,
    pub success: bool,
}

/// Minimal interface the trainers drive. Each implementor owns its random
/// stream; `reset` starts the next episode from it.
pub trait Environment: Send {
    fn reset(&mut self) -> Result<Frame>;
    fn step(&mut self, action: usize) -> Result<Step>;
    fn num_actions(&self) -> usize;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Run to `max_steps` or a collision.
    Cap,
    /// Additionally end as soon as `follow_k` following steps are reached.
    Strict,
}

impl std::str::FromStr for Protocol {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cap" => Ok(Protocol::Cap),
            "strict" => Ok(Protocol::Strict),
            o => Err(SimError::domain(format!("unknown protocol `{o}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub max_steps: usize,
    pub follow_k: usize,
    pub protocol: Protocol,
    pub find_distance: f64,
    pub follow_min: f64,
    pub follow_max: f64,
    /// Radians either side of the heading that still count as facing.
    pub facing_tolerance: f64,
    /// Minimum geodesic separation at spawn (meters).
    pub min_start_separation: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            max_steps: 500,
            follow_k: 100,
            protocol: Protocol::Cap,
            find_distance: 2.0,
            follow_min: 1.0,
            follow_max: 2.0,
            facing_tolerance: PI / 6.0,
            min_start_separation: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub find_bonus: f64,
    pub follow_reward: f64,
    pub collision_penalty: f64,
    pub slack: f64,
    /// Scale on the per-step decrease of geodesic distance before the find.
    pub shaping: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            find_bonus: 2.0,
            follow_reward: 0.05,
            collision_penalty: -5.0,
            slack: -0.002,
            shaping: 0.1,
        }
    }
}

/// Everything needed to instantiate a social-navigation environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub body: BodyParams,
    pub sensors: SensorConfig,
    pub episode: EpisodeConfig,
    pub reward: RewardConfig,
    pub traj_len: usize,
    /// Privileged signal placed in [`Frame::privileged`].
    pub privileged: PrivilegedMode,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            body: BodyParams::default(),
            sensors: SensorConfig::default(),
            episode: EpisodeConfig::default(),
            reward: RewardConfig::default(),
            traj_len: 20,
            privileged: PrivilegedMode::Traj,
        }
    }
}

/// A scene with its planning grid.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub scene: Scene,
    pub grid: NavGrid,
}

impl World {
    pub fn new(scene: Scene, body: &BodyParams) -> Self {
        let grid = NavGrid::build(&scene, body.robot_radius.max(body.human_radius));
        Self { scene, grid }
    }
}

/// Per-step reward decomposition, also written to step logs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardTerms {
    pub find: f64,
    pub follow: f64,
    pub collision: f64,
    pub slack: f64,
    pub shaping: f64,
}

impl RewardTerms {
    pub fn total(&self) -> f64 {
        self.find + self.follow + self.collision + self.slack + self.shaping
    }
}

/// What happened on one step, enough to recompute every episode metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub robot: Pose,
    pub human: Point,
    pub action: usize,
    pub distance: f64,
    pub detection: Detection,
    /// Robot-frame bearing of the human regardless of visibility.
    pub bearing: f64,
    pub collided: bool,
    pub following: bool,
    pub reward: RewardTerms,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodeProgress {
    pub steps: usize,
    pub found: bool,
    pub steps_to_find: usize,
    pub follow_steps: usize,
    /// Follow steps taken when the collision happened, if any.
    pub collided: bool,
    pub follow_at_collision: usize,
    pub total_reward: f64,
}

pub struct SocialNavEnv {
    pub config: EnvConfig,
    worlds: Arc<Vec<World>>,
    world: usize,
    master: ChaCha8Rng,
    episode_rng: ChaCha8Rng,
    robot: Pose,
    human: HumanoidScript,
    trajectory: TrajectoryBuffer,
    prev_action: usize,
    progress: EpisodeProgress,
    prev_geodesic: f64,
    last_obs: Option<Observation>,
    started: bool,
}

impl SocialNavEnv {
    /// `seed` drives the sequence of episode seeds drawn by [`Environment::reset`].
    pub fn new(config: EnvConfig, worlds: Arc<Vec<World>>, seed: u64) -> Result<Self> {
        if worlds.is_empty() {
            return Err(SimError::domain("environment needs at least one scene"));
        }
        config.body.validate()?;
        let traj_len = config.traj_len.max(1);
        let world = &worlds[0];
        let start = world.grid.center(world.grid.free_cells().next().ok_or_else(|| SimError::domain("scene has no free cell"))?);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let human = HumanoidScript::new(&world.grid, start, config.body.human_speed, &mut rng);
        Ok(Self {
            config,
            worlds,
            world: 0,
            master: ChaCha8Rng::seed_from_u64(seed),
            episode_rng: rng,
            robot: Pose::new(start.x, start.y, 0.0),
            human,
            trajectory: TrajectoryBuffer::new(traj_len),
            prev_action: STOP,
            progress: EpisodeProgress::default(),
            prev_geodesic: 0.0,
            last_obs: None,
            started: false,
        })
    }

    pub fn world(&self) -> &World {
        &self.worlds[self.world]
    }

    pub fn scene(&self) -> &Scene {
        &self.worlds[self.world].scene
    }

    pub fn grid(&self) -> &NavGrid {
        &self.worlds[self.world].grid
    }

    pub fn robot(&self) -> Pose {
        self.robot
    }

    pub fn human_position(&self) -> Point {
        self.human.position()
    }

    pub fn trajectory(&self) -> &TrajectoryBuffer {
        &self.trajectory
    }

    pub fn progress(&self) -> &EpisodeProgress {
        &self.progress
    }

    pub fn observation(&self) -> Option<&Observation> {
        self.last_obs.as_ref()
    }

    pub fn prev_action(&self) -> usize {
        self.prev_action
    }

    pub fn is_done(&self) -> bool {
        let ep = &self.config.episode;
        self.progress.collided
            || self.progress.steps >= ep.max_steps
            || (ep.protocol == Protocol::Strict && self.progress.follow_steps >= ep.follow_k)
    }

    /// Starts the episode identified by `seed`: scene choice, spawn poses and
    /// the humanoid's random stream all derive from it.
    pub fn reset_with_seed(&mut self, seed: u64) -> Result<Frame> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.world = rng.random_range(0..self.worlds.len());
        let worlds = Arc::clone(&self.worlds);
        let world = &worlds[self.world];
        let free: Vec<_> = world.grid.free_cells().collect();
        if free.len() < 2 {
            return Err(SimError::domain("scene has fewer than two free cells"));
        }
        let mut spawn = None;
        for _ in 0..200 {
            let rc = free[rng.random_range(0..free.len())];
            let hc = free[rng.random_range(0..free.len())];
            let (rp, hp) = (world.grid.center(rc), world.grid.center(hc));
            if let Some(d) = geodesic_distance(&world.grid, rp, hp) {
                if d >= self.config.episode.min_start_separation {
                    spawn = Some((rp, hp, d));
                    break;
                }
            }
        }
        let (rp, hp, d) = spawn.ok_or_else(|| SimError::domain("could not place robot and humanoid"))?;
        let heading = rng.random_range(-PI..PI);
        self.robot = Pose::new(rp.x, rp.y, heading);
        self.human = HumanoidScript::new(&world.grid, hp, self.config.body.human_speed, &mut rng);
        self.episode_rng = rng;
        self.trajectory.clear();
        self.trajectory.push(hp);
        self.prev_action = STOP;
        self.progress = EpisodeProgress::default();
        self.prev_geodesic = d;
        self.started = true;
        self.frame()
    }

    fn frame(&mut self) -> Result<Frame> {
        let obs = observe(
            self.scene(),
            self.robot,
            self.human.position(),
            &self.config.body,
            self.prev_action,
            &self.config.sensors,
        )?;
        let privileged = match self.config.privileged {
            PrivilegedMode::None => Vec::new(),
            mode => privileged_vector(
                mode,
                &self.trajectory,
                &humanoid_gps(self.robot, self.human.position()),
                self.scene(),
            )?,
        };
        let features = obs.features();
        self.last_obs = Some(obs);
        Ok(Frame { features, privileged })
    }

    /// Privileged vector for an arbitrary mode at the current state.
    pub fn privileged_for(&self, mode: PrivilegedMode) -> Result<Vec<f64>> {
        privileged_vector(
            mode,
            &self.trajectory,
            &humanoid_gps(self.robot, self.human.position()),
            self.scene(),
        )
    }

    fn geodesic(&self) -> f64 {
        geodesic_distance(self.grid(), self.robot.position(), self.human.position())
            .unwrap_or(self.prev_geodesic)
    }

    /// Applies `action` and returns the detailed record alongside the step.
    pub fn step_detailed(&mut self, action: usize) -> Result<(Step, StepRecord)> {
        if !self.started {
            return Err(SimError::contract("step before reset"));
        }
        if self.is_done() {
            return Err(SimError::contract("step after episode end"));
        }
        if action >= NUM_ACTIONS {
            return Err(SimError::domain(format!("action {action} out of range")));
        }
        let cfg = self.config.clone();
        let (lin, ang) = action_velocity(action);
        self.robot = step_robot(self.scene(), self.robot, &cfg.body, lin, ang);
        self.trajectory.push(self.human.position());
        let worlds = Arc::clone(&self.worlds);
        let grid = &worlds[self.world].grid;
        step_humanoid(&mut self.human, grid, cfg.body.dt, &mut self.episode_rng);
        self.prev_action = action;

        let human = self.human.position();
        let distance = self.robot.position().dist(human);
        let local = self.robot.to_local(human);
        let bearing = if distance > 0.0 { local.y.atan2(local.x) } else { 0.0 };
        let collided = check_collision(self.robot.position(), human, &cfg.body);

        let frame = self.frame()?;
        let detection = self.last_obs.as_ref().map(|o| o.detection).unwrap_or_default();

        let mut terms = RewardTerms {
            slack: cfg.reward.slack,
            ..RewardTerms::default()
        };
        let p = &mut self.progress;
        if !p.found {
            let g = geodesic_distance(grid, self.robot.position(), human).unwrap_or(self.prev_geodesic);
            terms.shaping = cfg.reward.shaping * (self.prev_geodesic - g);
            self.prev_geodesic = g;
            if distance <= cfg.episode.find_distance && detection.visible {
                p.found = true;
                p.steps_to_find = p.steps + 1;
                terms.find = cfg.reward.find_bonus;
            }
        }
        let following = p.found
            && distance >= cfg.episode.follow_min
            && distance <= cfg.episode.follow_max
            && bearing.abs() <= cfg.episode.facing_tolerance;
        if following {
            p.follow_steps += 1;
            terms.follow = cfg.reward.follow_reward;
        }
        if collided {
            p.collided = true;
            p.follow_at_collision = p.follow_steps;
            terms.collision = cfg.reward.collision_penalty;
        }
        p.steps += 1;
        let reward = terms.total();
        p.total_reward += reward;
        let record = StepRecord {
            t: p.steps - 1,
            robot: self.robot,
            human,
            action,
            distance,
            detection,
            bearing,
            collided,
            following,
            reward: terms,
            latent: None,
        };
        let done = self.is_done();
        let outcome = done.then(|| EpisodeOutcome {
            total_reward: self.progress.total_reward,
            length: self.progress.steps,
            success: episode_success(&self.progress, cfg.episode.follow_k),
        });
        Ok((
            Step {
                frame,
                reward,
                done,
                outcome,
            },
            record,
        ))
    }

    /// Geodesic robot-to-human distance tracked for shaping.
    pub fn tracked_geodesic(&self) -> f64 {
        self.prev_geodesic
    }

    pub fn current_geodesic(&self) -> f64 {
        self.geodesic()
    }
}

/// Found, reached `k` following steps, and no collision before reaching them.
pub fn episode_success(p: &EpisodeProgress, k: usize) -> bool {
    p.found && p.follow_steps >= k && (!p.collided || p.follow_at_collision >= k)
}

impl Environment for SocialNavEnv {
    fn reset(&mut self) -> Result<Frame> {
        let seed = self.master.random();
        self.reset_with_seed(seed)
    }

    fn step(&mut self, action: usize) -> Result<Step> {
        self.step_detailed(action).map(|(s, _)| s)
    }

    fn num_actions(&self) -> usize {
        NUM_ACTIONS
    }
}
