//! Episode runner, metrics, the privileged heuristic expert and multi-seed
//! evaluation reports.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapter::{Adapter, HistoryWindow};
use crate::env::{episode_success, EnvConfig, EpisodeProgress, Frame, Protocol, SocialNavEnv, StepRecord, World};
use crate::error::{Result, SimError};
use crate::geometry::{segment_segment_distance, Point};
use crate::grid::{plan_cells, NavGrid};
use crate::policy::{
    greedy_action, sample_action, Policy, BACKWARD, BACKWARD_LEFT, BACKWARD_RIGHT, FORWARD, FORWARD_LEFT,
    FORWARD_RIGHT, NUM_ACTIONS, STOP, TURN_LEFT, TURN_RIGHT,
};
use crate::sensors::PrivilegedMode;
use crate::sim::{step_robot, BodyParams, Pose, Scene};

/// Inside this distance the expert backs away instead of approaching.
pub const EXPERT_BACKUP_DISTANCE: f64 = 1.5;

/// Bearings within this are steered by going straight.
const STRAIGHT_TOLERANCE: f64 = PI / 40.0;
/// Beyond this the expert turns in place before moving.
const TURN_IN_PLACE: f64 = PI / 6.0;
/// While backing up, keep the human within this of straight ahead.
const BACKUP_FACING: f64 = PI / 12.0;
/// Lookahead along the planned route, in waypoints.
const LOOKAHEAD: usize = 4;

fn turn_toward(bearing: f64) -> usize {
    if bearing > 0.0 {
        TURN_LEFT
    } else {
        TURN_RIGHT
    }
}

fn moves(scene: &Scene, body: &BodyParams, robot: Pose, action: usize) -> bool {
    let (v, w) = crate::policy::action_velocity(action);
    let next = step_robot(scene, robot, body, v, w);
    next.x != robot.x || next.y != robot.y
}

/// Privileged planner. Beyond [`EXPERT_BACKUP_DISTANCE`] it steers along the
/// A* route to the human; closer in it backs up while turning to face them,
/// turning in place if backing is blocked. No route means stop.
pub fn heuristic_expert_step(scene: &Scene, grid: &NavGrid, body: &BodyParams, robot: Pose, human: Point) -> usize {
    let here = robot.position();
    let dist = here.dist(human);
    if dist <= EXPERT_BACKUP_DISTANCE {
        let local = robot.to_local(human);
        let bearing = if dist > 0.0 { local.y.atan2(local.x) } else { 0.0 };
        let backup = if bearing.abs() <= BACKUP_FACING {
            BACKWARD
        } else if bearing > 0.0 {
            BACKWARD_LEFT
        } else {
            BACKWARD_RIGHT
        };
        if moves(scene, body, robot, backup) {
            return backup;
        }
        return if bearing.abs() > BACKUP_FACING { turn_toward(bearing) } else { TURN_LEFT };
    }
    let (Some(s), Some(g)) = (grid.nearest_free(here), grid.nearest_free(human)) else {
        return STOP;
    };
    let Some(path) = plan_cells(grid, s, g) else {
        return STOP;
    };
    // farthest of the next few waypoints reachable in a straight, clear line
    let mut target = path.waypoints.first().copied().unwrap_or(human);
    for wp in path.waypoints.iter().take(LOOKAHEAD) {
        let clear = scene
            .all_walls()
            .all(|w| segment_segment_distance(here, *wp, w.a, w.b) >= body.robot_radius);
        if !clear {
            break;
        }
        target = *wp;
    }
    let direct = scene
        .all_walls()
        .all(|w| segment_segment_distance(here, human, w.a, w.b) >= body.robot_radius);
    if direct || path.waypoints.len() <= 1 {
        target = human;
    }
    let local = robot.to_local(target);
    let bearing = local.y.atan2(local.x);
    let action = if bearing.abs() > TURN_IN_PLACE {
        turn_toward(bearing)
    } else if bearing > STRAIGHT_TOLERANCE {
        FORWARD_LEFT
    } else if bearing < -STRAIGHT_TOLERANCE {
        FORWARD_RIGHT
    } else {
        FORWARD
    };
    if action != TURN_LEFT && action != TURN_RIGHT && !moves(scene, body, robot, action) {
        return turn_toward(bearing);
    }
    action
}

/// Anything that picks actions in a [`SocialNavEnv`].
pub trait Agent: Send {
    fn name(&self) -> String;
    /// Called before the first step of every episode.
    fn begin(&mut self);
    /// Chooses an action; also returns the latent it acted on, if any.
    fn act(&mut self, env: &SocialNavEnv, frame: &Frame, rng: &mut ChaCha8Rng) -> Result<(usize, Option<Vec<f64>>)>;
}

pub struct ExpertAgent;

impl Agent for ExpertAgent {
    fn name(&self) -> String {
        "expert".into()
    }

    fn begin(&mut self) {}

    fn act(&mut self, env: &SocialNavEnv, _: &Frame, _: &mut ChaCha8Rng) -> Result<(usize, Option<Vec<f64>>)> {
        let w = env.world();
        let a = heuristic_expert_step(&w.scene, &w.grid, &env.config.body, env.robot(), env.human_position());
        Ok((a, None))
    }
}

pub struct RandomAgent;

impl Agent for RandomAgent {
    fn name(&self) -> String {
        "random".into()
    }

    fn begin(&mut self) {}

    fn act(&mut self, _: &SocialNavEnv, _: &Frame, rng: &mut ChaCha8Rng) -> Result<(usize, Option<Vec<f64>>)> {
        Ok((rng.random_range(0..NUM_ACTIONS), None))
    }
}

/// Where a policy agent gets the latent it conditions on.
#[derive(Clone)]
pub enum LatentSource {
    /// `z = μ(e)` from the frame's privileged vector.
    Privileged,
    /// Always zero (the no-privilege baseline).
    Zero,
    /// `ẑ = ψ(history)`; needs no privileged input.
    Adapter(Arc<Adapter>),
}

pub struct PolicyAgent {
    pub policy: Arc<Policy>,
    pub source: LatentSource,
    pub greedy: bool,
    hidden: Vec<f64>,
    prev_action: usize,
    window: Option<HistoryWindow>,
    last_window: Vec<f64>,
}

impl PolicyAgent {
    pub fn new(policy: Arc<Policy>, source: LatentSource, greedy: bool) -> Result<Self> {
        let window = match &source {
            LatentSource::Adapter(a) => {
                if a.config.feature_width != policy.config.obs_hidden
                    || a.config.latent_dim != policy.config.latent_dim
                    || a.config.num_actions != policy.config.num_actions
                {
                    return Err(SimError::contract("adapter shape does not fit the policy"));
                }
                Some(HistoryWindow::new(&a.config))
            }
            LatentSource::Privileged if !policy.uses_latent() => {
                return Err(SimError::contract("policy was trained without a privileged latent"));
            }
            _ => None,
        };
        Ok(Self {
            hidden: policy.initial_hidden(),
            policy,
            source,
            greedy,
            prev_action: STOP,
            window,
            last_window: Vec::new(),
        })
    }

    /// History window the adapter saw on the latest step.
    pub fn last_window(&self) -> &[f64] {
        &self.last_window
    }
}

impl Agent for PolicyAgent {
    fn name(&self) -> String {
        match self.source {
            LatentSource::Privileged => format!("s1-{}", self.policy.config.mode),
            LatentSource::Zero => "baseline".into(),
            LatentSource::Adapter(_) => format!("s2-{}", self.policy.config.mode),
        }
    }

    fn begin(&mut self) {
        self.hidden = self.policy.initial_hidden();
        self.prev_action = STOP;
        if let Some(w) = &mut self.window {
            w.clear();
        }
    }

    fn act(&mut self, _: &SocialNavEnv, frame: &Frame, rng: &mut ChaCha8Rng) -> Result<(usize, Option<Vec<f64>>)> {
        let p = &self.policy;
        let enc = p.encode_obs(&frame.features)?;
        let z = match &self.source {
            LatentSource::Privileged => p.encode_trajectory(&frame.privileged)?,
            LatentSource::Zero => vec![0.0; p.config.latent_dim],
            LatentSource::Adapter(a) => {
                self.last_window = self.window.as_ref().expect("adapter window").read();
                a.forward(&self.last_window)?
            }
        };
        let out = p.step_encoded(&self.hidden, &enc, self.prev_action, &z)?;
        let action = if self.greedy {
            greedy_action(&out.logits)
        } else {
            sample_action(&out.logits, rng)?.0
        };
        self.hidden = out.hidden;
        self.prev_action = action;
        if let Some(w) = &mut self.window {
            w.push(&enc, action)?;
        }
        Ok((action, Some(z)))
    }
}

/// Per-episode outcome; every field is recomputable from the step log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub found: bool,
    /// Steps until the find (0 when never found).
    pub steps_to_find: usize,
    /// Expert steps-to-find on the same episode (`l*`).
    pub optimal_find_steps: usize,
    pub follow_steps: usize,
    pub total_steps: usize,
    pub collided: bool,
    pub episode_success: bool,
}

impl EpisodeMetrics {
    pub fn sps(&self) -> f64 {
        compute_sps(self.found, self.steps_to_find, self.optimal_find_steps)
    }

    pub fn following_rate(&self) -> f64 {
        compute_following_rate(self.follow_steps, self.total_steps, self.optimal_find_steps)
    }
}

/// `l*/max(l, l*)` when found, else 0.
pub fn compute_sps(found: bool, steps: usize, optimal: usize) -> f64 {
    if !found {
        return 0.0;
    }
    let denom = steps.max(optimal).max(1);
    optimal as f64 / denom as f64
}

/// Following steps over the steps left after an optimal find, in `[0, 1]`.
pub fn compute_following_rate(follow: usize, total: usize, optimal: usize) -> f64 {
    let avail = total.saturating_sub(optimal).max(1);
    (follow as f64 / avail as f64).clamp(0.0, 1.0)
}

/// First line of every step log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub config_hash: String,
    pub eval_seed: u64,
    pub episode: usize,
    pub episode_seed: u64,
    pub agent: String,
    pub l_star: usize,
    pub follow_k: usize,
    pub protocol: Protocol,
    pub max_steps: usize,
    pub find_distance: f64,
    pub follow_min: f64,
    pub follow_max: f64,
    pub facing_tolerance: f64,
    pub collision_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LogLine {
    Header(LogHeader),
    Step(StepRecord),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRun {
    pub metrics: EpisodeMetrics,
    pub header: LogHeader,
    pub records: Vec<StepRecord>,
}

impl EpisodeRun {
    pub fn to_jsonl(&self) -> String {
        let mut s = serde_json::to_string(&LogLine::Header(self.header.clone())).expect("header serializes");
        s.push('\n');
        for r in &self.records {
            s.push_str(&serde_json::to_string(&LogLine::Step(r.clone())).expect("record serializes"));
            s.push('\n');
        }
        s
    }
}

fn metrics_from_progress(p: &EpisodeProgress, l_star: usize, k: usize) -> EpisodeMetrics {
    EpisodeMetrics {
        found: p.found,
        steps_to_find: p.steps_to_find,
        optimal_find_steps: l_star,
        follow_steps: p.follow_steps,
        total_steps: p.steps,
        collided: p.collided,
        episode_success: episode_success(p, k),
    }
}

/// Plays one episode identified by `episode_seed`. Agent randomness is drawn
/// from a stream derived from the same seed.
pub fn run_episode(
    env: &mut SocialNavEnv,
    agent: &mut dyn Agent,
    episode_seed: u64,
    mut header: LogHeader,
) -> Result<EpisodeRun> {
    let mut frame = env.reset_with_seed(episode_seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(episode_seed ^ 0x5eed_a9e7);
    agent.begin();
    let mut records = Vec::with_capacity(env.config.episode.max_steps);
    loop {
        let (action, latent) = agent.act(env, &frame, &mut rng)?;
        let (step, mut rec) = env.step_detailed(action)?;
        rec.latent = latent;
        records.push(rec);
        if step.done {
            break;
        }
        frame = step.frame;
    }
    let ep = &env.config.episode;
    header.episode_seed = episode_seed;
    header.agent = agent.name();
    header.follow_k = ep.follow_k;
    header.protocol = ep.protocol;
    header.max_steps = ep.max_steps;
    header.find_distance = ep.find_distance;
    header.follow_min = ep.follow_min;
    header.follow_max = ep.follow_max;
    header.facing_tolerance = ep.facing_tolerance;
    header.collision_distance = env.config.body.collision_distance();
    Ok(EpisodeRun {
        metrics: metrics_from_progress(env.progress(), header.l_star, ep.follow_k),
        header,
        records,
    })
}

/// Recomputes the episode metrics from a step log alone.
pub fn metrics_from_log(h: &LogHeader, records: &[StepRecord]) -> EpisodeMetrics {
    let mut p = EpisodeProgress::default();
    for r in records {
        if !p.found && r.distance <= h.find_distance && r.detection.visible {
            p.found = true;
            p.steps_to_find = p.steps + 1;
        }
        if p.found && r.distance >= h.follow_min && r.distance <= h.follow_max && r.bearing.abs() <= h.facing_tolerance {
            p.follow_steps += 1;
        }
        if r.distance < h.collision_distance && !p.collided {
            p.collided = true;
            p.follow_at_collision = p.follow_steps;
        }
        p.steps += 1;
    }
    metrics_from_progress(&p, h.l_star, h.follow_k)
}

/// Parses a JSONL step log; errors name the offending record (0 = header).
pub fn parse_log(text: &str) -> Result<(LogHeader, Vec<StepRecord>)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let header = match lines.next() {
        Some((i, l)) => match serde_json::from_str::<LogLine>(l) {
            Ok(LogLine::Header(h)) => h,
            Ok(_) => return Err(SimError::contract(format!("record {i}: expected a header"))),
            Err(e) => return Err(SimError::contract(format!("record {i}: {e}"))),
        },
        None => return Err(SimError::contract("record 0: empty log")),
    };
    let mut records = Vec::new();
    for (i, l) in lines {
        match serde_json::from_str::<LogLine>(l) {
            Ok(LogLine::Step(r)) => {
                if r.t != records.len() {
                    return Err(SimError::contract(format!(
                        "record {i}: step index {} out of sequence (expected {})",
                        r.t,
                        records.len()
                    )));
                }
                records.push(r);
            }
            Ok(LogLine::Header(_)) => return Err(SimError::contract(format!("record {i}: unexpected second header"))),
            Err(e) => return Err(SimError::contract(format!("record {i}: {e}"))),
        }
    }
    Ok((header, records))
}

/// How to build the agent for each evaluation episode.
#[derive(Clone)]
pub enum AgentSpec {
    Expert,
    Random,
    Policy {
        policy: Arc<Policy>,
        source: LatentSource,
        greedy: bool,
    },
}

impl AgentSpec {
    pub fn build(&self) -> Result<Box<dyn Agent>> {
        Ok(match self {
            AgentSpec::Expert => Box::new(ExpertAgent),
            AgentSpec::Random => Box::new(RandomAgent),
            AgentSpec::Policy { policy, source, greedy } => {
                Box::new(PolicyAgent::new(policy.clone(), source.clone(), *greedy)?)
            }
        })
    }

    /// Privileged signal the environment must emit for this agent.
    pub fn privileged_mode(&self) -> PrivilegedMode {
        match self {
            AgentSpec::Policy {
                policy,
                source: LatentSource::Privileged,
                ..
            } => policy.config.mode,
            _ => PrivilegedMode::None,
        }
    }
}

/// Seed of episode `i` under evaluation seed `seed`.
pub fn episode_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(i as u64)
}

/// Means over one seed's episodes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSummary {
    pub s: f64,
    pub sps: f64,
    pub f: f64,
    pub cr: f64,
    pub es: f64,
    /// Mean steps to find over found episodes only.
    pub find_steps_found: f64,
    /// Mean steps to find with unfound episodes counted at their length.
    pub find_steps_all: f64,
    pub follow_steps: f64,
    pub episodes: usize,
}

pub fn summarize(metrics: &[EpisodeMetrics]) -> MetricSummary {
    let n = metrics.len().max(1) as f64;
    let mean = |f: &dyn Fn(&EpisodeMetrics) -> f64| metrics.iter().map(f).sum::<f64>() / n;
    let found: Vec<_> = metrics.iter().filter(|m| m.found).collect();
    MetricSummary {
        s: mean(&|m| m.found as u8 as f64),
        sps: mean(&|m| m.sps()),
        f: mean(&|m| m.following_rate()),
        cr: mean(&|m| m.collided as u8 as f64),
        es: mean(&|m| m.episode_success as u8 as f64),
        find_steps_found: if found.is_empty() {
            0.0
        } else {
            found.iter().map(|m| m.steps_to_find as f64).sum::<f64>() / found.len() as f64
        },
        find_steps_all: mean(&|m| if m.found { m.steps_to_find } else { m.total_steps } as f64),
        follow_steps: mean(&|m| m.follow_steps as f64),
        episodes: metrics.len(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedReport {
    pub seed: u64,
    pub metrics: Vec<EpisodeMetrics>,
    pub runs: Vec<EpisodeRun>,
    pub summary: MetricSummary,
}

/// Expert steps-to-find for each episode seed (the `l*` oracle); episodes
/// the expert never solves fall back to `max_steps`.
pub fn optimal_find_steps(worlds: &Arc<Vec<World>>, env_cfg: &EnvConfig, seeds: &[u64]) -> Result<Vec<usize>> {
    let mut cfg = env_cfg.clone();
    cfg.privileged = PrivilegedMode::None;
    seeds
        .par_iter()
        .map(|&s| {
            let mut env = SocialNavEnv::new(cfg.clone(), worlds.clone(), s)?;
            let run = run_episode(&mut env, &mut ExpertAgent, s, blank_header(""))?;
            Ok(if run.metrics.found {
                run.metrics.steps_to_find
            } else {
                cfg.episode.max_steps
            })
        })
        .collect()
}

pub fn blank_header(config_hash: &str) -> LogHeader {
    LogHeader {
        config_hash: config_hash.to_string(),
        eval_seed: 0,
        episode: 0,
        episode_seed: 0,
        agent: String::new(),
        l_star: 0,
        follow_k: 0,
        protocol: Protocol::Cap,
        max_steps: 0,
        find_distance: 0.0,
        follow_min: 0.0,
        follow_max: 0.0,
        facing_tolerance: 0.0,
        collision_distance: 0.0,
    }
}

/// Evaluates `episodes` episodes for one evaluation seed. Logs are kept in
/// memory when `keep_logs` is set.
pub fn evaluate_seed(
    spec: &AgentSpec,
    worlds: &Arc<Vec<World>>,
    env_cfg: &EnvConfig,
    seed: u64,
    episodes: usize,
    config_hash: &str,
    keep_logs: bool,
) -> Result<SeedReport> {
    let mut cfg = env_cfg.clone();
    cfg.privileged = spec.privileged_mode();
    let seeds: Vec<u64> = (0..episodes).map(|i| episode_seed(seed, i)).collect();
    let l_star = optimal_find_steps(worlds, &cfg, &seeds)?;
    let runs: Vec<EpisodeRun> = (0..episodes)
        .into_par_iter()
        .map(|i| {
            let mut env = SocialNavEnv::new(cfg.clone(), worlds.clone(), seeds[i])?;
            let mut agent = spec.build()?;
            let mut header = blank_header(config_hash);
            header.eval_seed = seed;
            header.episode = i;
            header.l_star = l_star[i];
            run_episode(&mut env, agent.as_mut(), seeds[i], header)
        })
        .collect::<Result<_>>()?;
    let metrics: Vec<EpisodeMetrics> = runs.iter().map(|r| r.metrics).collect();
    Ok(SeedReport {
        seed,
        summary: summarize(&metrics),
        metrics,
        runs: if keep_logs { runs } else { Vec::new() },
    })
}

/// Writes each run as `<dir>/seed<S>_ep<NNNN>.jsonl`.
pub fn write_logs(dir: &Path, report: &SeedReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for run in &report.runs {
        let path = dir.join(format!("seed{}_ep{:04}.jsonl", report.seed, run.header.episode));
        let mut f = std::fs::File::create(path)?;
        f.write_all(run.to_jsonl().as_bytes())?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

fn mean_std(v: &[f64]) -> MeanStd {
    if let Some(&first) = v.first() {
        if v.iter().all(|x| *x == first) {
            return MeanStd { mean: first, std: 0.0 };
        }
    }
    let n = v.len().max(1) as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    MeanStd { mean, std: var.sqrt() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub s: MeanStd,
    pub sps: MeanStd,
    pub f: MeanStd,
    pub cr: MeanStd,
    pub es: MeanStd,
    pub find_steps_found: MeanStd,
    pub find_steps_all: MeanStd,
    pub follow_steps: MeanStd,
    pub seeds: usize,
    pub episodes: usize,
    /// Only one seed: the std columns carry no information.
    pub single_seed: bool,
    pub protocol: Protocol,
}

/// Mean and population std of every metric across seeds.
pub fn aggregate(summaries: &[MetricSummary], protocol: Protocol) -> Result<EvalReport> {
    if summaries.is_empty() {
        return Err(SimError::domain("aggregate needs at least one seed"));
    }
    let col = |f: fn(&MetricSummary) -> f64| mean_std(&summaries.iter().map(f).collect::<Vec<_>>());
    Ok(EvalReport {
        s: col(|m| m.s),
        sps: col(|m| m.sps),
        f: col(|m| m.f),
        cr: col(|m| m.cr),
        es: col(|m| m.es),
        find_steps_found: col(|m| m.find_steps_found),
        find_steps_all: col(|m| m.find_steps_all),
        follow_steps: col(|m| m.follow_steps),
        seeds: summaries.len(),
        episodes: summaries.iter().map(|m| m.episodes).sum(),
        single_seed: summaries.len() == 1,
        protocol,
    })
}

impl EvalReport {
    /// `metric,mean,std` rows after a `# config_hash=…,seed=…` line.
    pub fn to_csv(&self, config_hash: &str, seed: u64) -> String {
        let mut s = format!("# config_hash={config_hash},seed={seed}\n");
        s.push_str(&format!(
            "# seeds={},episodes={},single_seed={},protocol={:?}\n",
            self.seeds, self.episodes, self.single_seed, self.protocol
        ));
        s.push_str("metric,mean,std\n");
        for (name, m) in [
            ("S", self.s),
            ("SPS", self.sps),
            ("F", self.f),
            ("CR", self.cr),
            ("ES", self.es),
            ("find_steps_found", self.find_steps_found),
            ("find_steps_all", self.find_steps_all),
            ("follow_steps", self.follow_steps),
        ] {
            s.push_str(&format!("{name},{},{}\n", m.mean, m.std));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Segment;

    #[test]
    fn sps_cases() {
        assert_eq!(compute_sps(true, 200, 100), 0.5);
        assert_eq!(compute_sps(true, 80, 80), 1.0);
        assert_eq!(compute_sps(false, 10, 5), 0.0);
    }

    #[test]
    fn following_rate_cases() {
        assert_eq!(compute_following_rate(200, 500, 100), 0.5);
        assert_eq!(compute_following_rate(0, 500, 100), 0.0);
        assert_eq!(compute_following_rate(400, 500, 100), 1.0);
    }

    #[test]
    fn aggregate_cases() {
        let mk = |v: f64| MetricSummary {
            s: v,
            episodes: 1,
            ..MetricSummary::default()
        };
        let r = aggregate(&[mk(0.4), mk(0.6)], Protocol::Cap).unwrap();
        assert!((r.s.mean - 0.5).abs() < 1e-12);
        assert!((r.s.std - 0.1).abs() < 1e-12);
        let r = aggregate(&[mk(0.7), mk(0.7), mk(0.7)], Protocol::Cap).unwrap();
        assert_eq!(r.s.std, 0.0);
        let r = aggregate(&[mk(0.3)], Protocol::Cap).unwrap();
        assert!(r.single_seed && r.s.std == 0.0);
        assert!(aggregate(&[], Protocol::Cap).is_err());
    }

    fn open_room() -> (Scene, NavGrid) {
        let s = Scene::empty(10.0, 10.0).unwrap();
        let g = NavGrid::build(&s, 0.25);
        (s, g)
    }

    #[test]
    fn expert_forward_when_far() {
        let (s, g) = open_room();
        let a = heuristic_expert_step(&s, &g, &BodyParams::default(), Pose::new(2.0, 5.0, 0.0), Point::new(5.0, 5.0));
        assert_eq!(a, FORWARD);
    }

    #[test]
    fn expert_backs_up_when_close() {
        let (s, g) = open_room();
        let a = heuristic_expert_step(&s, &g, &BodyParams::default(), Pose::new(5.0, 5.0, 0.0), Point::new(6.0, 5.0));
        assert_eq!(a, BACKWARD);
    }

    #[test]
    fn expert_turns_in_place_against_wall() {
        let (s, g) = open_room();
        let a = heuristic_expert_step(&s, &g, &BodyParams::default(), Pose::new(0.27, 5.0, 0.0), Point::new(1.27, 5.0));
        assert_eq!(a, TURN_LEFT);
    }

    #[test]
    fn expert_turns_toward_route_around_corner() {
        // wall from the bottom up to y=7 between robot and human; the route
        // goes up and over, so a robot facing the human must turn left
        let s = Scene::new(10.0, 10.0, vec![Segment::new(Point::new(5.0, 0.0), Point::new(5.0, 7.0))], 0.25).unwrap();
        let g = NavGrid::build(&s, 0.25);
        let body = BodyParams::default();
        let robot = Pose::new(3.0, 3.0, 0.0);
        let human = Point::new(7.0, 3.0);
        let path = plan_cells(&g, g.nearest_free(robot.position()).unwrap(), g.nearest_free(human).unwrap()).unwrap();
        let first = path.waypoints[0];
        let local = robot.to_local(first);
        let route_bearing = local.y.atan2(local.x);
        assert!(route_bearing > 0.0);
        let a = heuristic_expert_step(&s, &g, &body, robot, human);
        assert!(a == TURN_LEFT || a == FORWARD_LEFT, "action {a}");
    }
}
