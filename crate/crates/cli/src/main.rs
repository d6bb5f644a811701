use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use sda_core::config::RunConfig;
use sda_core::env::{Protocol, World};
use sda_core::eval::{aggregate, evaluate_seed, parse_log, write_logs, AgentSpec, LatentSource};
use sda_core::pipeline::{default_worlds, eval_env, load_adapter_for, run_stage1, run_stage2, stage1_source, to_worlds};
use sda_core::policy::Policy;
use sda_core::replay::{log_to_csv, log_to_svg};
use sda_core::scenegen::generate_scene;
use sda_core::sensors::PrivilegedMode;
use sda_core::sim::Scene;
use sda_core::{Result, SimError};

/// Environment variable that overrides every command's seed.
const SEED_ENV: &str = "SDA_SEED";

#[derive(Parser)]
#[command(name = "sda", version, about = "Social navigation with privileged-latent adaptation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Expert,
    Baseline,
    S1,
    S2,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum Privileged {
    None,
    Traj,
    Hgps,
    Both,
}

impl From<Privileged> for PrivilegedMode {
    fn from(p: Privileged) -> Self {
        match p {
            Privileged::None => PrivilegedMode::None,
            Privileged::Traj => PrivilegedMode::Traj,
            Privileged::Hgps => PrivilegedMode::Hgps,
            Privileged::Both => PrivilegedMode::Both,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Cap,
    Strict,
}

#[derive(Clone, Copy, ValueEnum)]
enum Ablation {
    /// Stage-1 with trajectory lengths 5, 20 and 50.
    TrajLen,
    /// Stage-1 + Stage-2 with traj, hgps and both teachers.
    Teacher,
}

#[derive(clap::Args, Clone)]
struct Common {
    /// Run configuration JSON (missing fields take defaults).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory of training scene JSON files (default: generated split).
    #[arg(long)]
    train_scenes: Option<PathBuf>,
    /// Directory of evaluation scene JSON files (default: generated split).
    #[arg(long)]
    eval_scenes: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate procedural floor plans.
    GenScenes {
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Stage 1: PPO on the policy and trajectory encoder.
    TrainS1 {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        privileged: Option<Privileged>,
        /// Override the total number of environment steps.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        traj_len: Option<usize>,
    },
    /// Stage 2: fit the adapter against a frozen Stage-1 policy.
    TrainS2 {
        #[command(flatten)]
        common: Common,
        /// Stage-1 policy checkpoint.
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Evaluate an agent over seeded episodes.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        adapter: Option<PathBuf>,
        /// Expected privileged mode of the checkpoint.
        #[arg(long, value_enum)]
        privileged: Option<Privileged>,
        #[arg(long, value_enum, default_value = "cap")]
        protocol: ProtocolArg,
        #[arg(long)]
        episodes: Option<usize>,
        /// Comma-separated evaluation seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        out: PathBuf,
        /// Also write one JSONL step log per episode.
        #[arg(long)]
        logs: bool,
    },
    /// Render a JSONL step log to SVG and CSV.
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an ablation sweep and write a summary CSV.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        kind: Ablation,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
    },
}

fn seed_override() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .parse()
            .map(Some)
            .map_err(|_| SimError::domain(format!("{SEED_ENV}={v} is not an integer"))),
        Err(_) => Ok(None),
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(s) = seed_override()? {
        cfg.seed = s;
    }
    cfg.sync();
    cfg.validate()?;
    Ok(cfg)
}

fn load_scene_dir(dir: &Path) -> Result<Vec<Scene>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(SimError::domain(format!("no scene files in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| Scene::from_json(&std::fs::read_to_string(p)?))
        .collect()
}

fn worlds(cfg: &RunConfig, common: &Common) -> Result<(Arc<Vec<World>>, Arc<Vec<World>>)> {
    let (mut train, mut eval) = default_worlds(cfg)?;
    if let Some(d) = &common.train_scenes {
        train = to_worlds(load_scene_dir(d)?, &cfg.env);
    }
    if let Some(d) = &common.eval_scenes {
        eval = to_worlds(load_scene_dir(d)?, &cfg.env);
    }
    Ok((train, eval))
}

fn gen_scenes(count: usize, seed: u64, out: &Path, config: Option<&Path>) -> Result<()> {
    if count == 0 {
        return Err(SimError::domain("count must be at least 1"));
    }
    let mut cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let seed = seed_override()?.unwrap_or(seed);
    cfg.seed = seed;
    let hash = cfg.config_hash();
    std::fs::create_dir_all(out)?;
    for i in 0..count as u64 {
        let s = seed + i;
        let scene = generate_scene(s, &cfg.scenes)?;
        let mut v: serde_json::Value = serde_json::from_str(&scene.to_json())?;
        v["seed"] = s.into();
        v["config_hash"] = hash.clone().into();
        std::fs::write(out.join(format!("scene_{s:07}.json")), serde_json::to_string_pretty(&v)? + "\n")?;
    }
    println!("wrote {count} scenes to {}", out.display());
    Ok(())
}

fn train_s1(common: &Common, out: &Path, privileged: Option<Privileged>, steps: Option<usize>, traj_len: Option<usize>) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(p) = privileged {
        cfg = cfg.with_mode(p.into());
    }
    if let Some(n) = traj_len {
        cfg = cfg.with_traj_len(n);
    }
    if let Some(s) = steps {
        cfg.ppo.total_steps = s;
    }
    cfg.validate()?;
    let (train, eval) = worlds(&cfg, common)?;
    let outcome = run_stage1(&cfg, train, eval, Some(out))?;
    if let Some(last) = outcome.rows.last() {
        println!(
            "step {} S={:.3} SPS={:.3} F={:.3} CR={:.3} ES={:.3}",
            last.step, last.summary.s, last.summary.sps, last.summary.f, last.summary.cr, last.summary.es
        );
    }
    println!("checkpoint {}", out.join("policy.ckpt").display());
    Ok(())
}

fn train_s2(common: &Common, policy_path: &Path, out: &Path, steps: Option<usize>) -> Result<()> {
    let mut cfg = load_config(common)?;
    let (policy, _) = Policy::load(policy_path)?;
    cfg.policy = policy.config.clone();
    cfg.sync();
    if let Some(s) = steps {
        cfg.stage2.total_steps = s;
    }
    cfg.validate()?;
    let (train, eval) = worlds(&cfg, common)?;
    let outcome = run_stage2(&cfg, policy, train, eval, Some(out))?;
    let r = &outcome.report;
    println!(
        "held-out MSE {:.5} -> {:.5} (ratio {:.4}); frozen parameters unchanged: {}",
        r.initial_heldout_mse,
        r.final_heldout_mse,
        r.final_heldout_mse / r.initial_heldout_mse,
        r.frozen_before == r.frozen_after
    );
    println!("checkpoint {}", out.join("adapter.ckpt").display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn eval_cmd(
    common: &Common,
    mode: Mode,
    policy_path: Option<&Path>,
    adapter_path: Option<&Path>,
    privileged: Option<Privileged>,
    protocol: ProtocolArg,
    episodes: Option<usize>,
    seeds: Option<Vec<u64>>,
    out: &Path,
    logs: bool,
) -> Result<()> {
    let mut cfg = load_config(common)?;
    cfg.env.episode.protocol = match protocol {
        ProtocolArg::Cap => Protocol::Cap,
        ProtocolArg::Strict => Protocol::Strict,
    };
    if let Some(e) = episodes {
        cfg.eval.episodes = e;
    }
    if let Some(s) = seeds {
        cfg.eval.seeds = s;
    }
    let load_policy = || -> Result<Policy> {
        let p = policy_path.ok_or_else(|| SimError::domain("this mode needs --policy"))?;
        let (policy, _) = Policy::load(p)?;
        if let Some(m) = privileged {
            let m: PrivilegedMode = m.into();
            if m != policy.config.mode {
                return Err(SimError::contract(format!(
                    "checkpoint was trained with privileged mode {}, not {m}",
                    policy.config.mode
                )));
            }
        }
        Ok(policy)
    };
    let spec = match mode {
        Mode::Expert => AgentSpec::Expert,
        Mode::Random => AgentSpec::Random,
        Mode::Baseline => {
            let policy = load_policy()?;
            if policy.uses_latent() {
                return Err(SimError::contract("baseline mode expects a policy trained with privileged mode none"));
            }
            AgentSpec::Policy {
                policy: Arc::new(policy),
                source: LatentSource::Zero,
                greedy: cfg.eval.greedy,
            }
        }
        Mode::S1 => {
            let policy = load_policy()?;
            AgentSpec::Policy {
                source: stage1_source(&policy),
                policy: Arc::new(policy),
                greedy: cfg.eval.greedy,
            }
        }
        Mode::S2 => {
            let policy = load_policy()?;
            let a = adapter_path.ok_or_else(|| SimError::domain("mode s2 needs --adapter"))?;
            let adapter = load_adapter_for(a, &policy)?;
            AgentSpec::Policy {
                policy: Arc::new(policy),
                source: LatentSource::Adapter(Arc::new(adapter)),
                greedy: cfg.eval.greedy,
            }
        }
    };
    if let AgentSpec::Policy { policy, .. } = &spec {
        cfg.policy = policy.config.clone();
        cfg.sync();
    }
    let (_, eval) = worlds(&cfg, common)?;
    let env = eval_env(&cfg, spec.privileged_mode());
    let hash = cfg.config_hash();
    std::fs::create_dir_all(out)?;
    let mut summaries = Vec::new();
    for &seed in &cfg.eval.seeds {
        let r = evaluate_seed(&spec, &eval, &env, seed, cfg.eval.episodes, &hash, logs)?;
        if logs {
            write_logs(&out.join("logs"), &r)?;
        }
        summaries.push(r.summary);
    }
    let report = aggregate(&summaries, cfg.env.episode.protocol)?;
    let csv = report.to_csv(&hash, cfg.seed);
    std::fs::write(out.join("report.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn replay(log: &Path, scene: Option<&Path>, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(log)?;
    let (header, records) = parse_log(&text).map_err(|e| match e {
        SimError::Contract(m) => SimError::contract(format!("{}: {m}", log.display())),
        e => e,
    })?;
    let scene = scene
        .map(|p| Scene::from_json(&std::fs::read_to_string(p)?))
        .transpose()?;
    std::fs::create_dir_all(out)?;
    let stem = log.file_stem().and_then(|s| s.to_str()).unwrap_or("replay");
    std::fs::write(out.join(format!("{stem}.svg")), log_to_svg(&header, &records, scene.as_ref()))?;
    std::fs::write(out.join(format!("{stem}.csv")), log_to_csv(&header, &records))?;
    println!("rendered {} steps", records.len());
    Ok(())
}

fn ablate(common: &Common, kind: Ablation, out: &Path, steps: Option<usize>) -> Result<()> {
    let mut base = load_config(common)?;
    if let Some(s) = steps {
        base.ppo.total_steps = s;
    }
    std::fs::create_dir_all(out)?;
    let mut csv = format!(
        "# config_hash={},seed={}\nvariant,stage,S,SPS,F,CR,ES\n",
        base.config_hash(),
        base.seed
    );
    let variants: Vec<(String, RunConfig)> = match kind {
        Ablation::TrajLen => [5, 20, 50]
            .into_iter()
            .map(|n| (format!("traj_len_{n}"), base.clone().with_mode(PrivilegedMode::Traj).with_traj_len(n)))
            .collect(),
        Ablation::Teacher => [PrivilegedMode::Traj, PrivilegedMode::Hgps, PrivilegedMode::Both]
            .into_iter()
            .map(|m| (format!("teacher_{m}"), base.clone().with_mode(m)))
            .collect(),
    };
    let (train, eval) = worlds(&base, common)?;
    for (name, cfg) in variants {
        let dir = out.join(&name);
        let s1 = run_stage1(&cfg, train.clone(), eval.clone(), Some(&dir))?;
        let hash = cfg.config_hash();
        let report_for = |spec: &AgentSpec, env| -> Result<_> {
            let mut sums = Vec::new();
            for &seed in &cfg.eval.seeds {
                sums.push(evaluate_seed(spec, &eval, env, seed, cfg.eval.episodes, &hash, false)?.summary);
            }
            aggregate(&sums, cfg.env.episode.protocol)
        };
        let spec = AgentSpec::Policy {
            source: stage1_source(&s1.policy),
            policy: Arc::new(s1.policy.clone()),
            greedy: cfg.eval.greedy,
        };
        let env1 = eval_env(&cfg, spec.privileged_mode());
        let r = report_for(&spec, &env1)?;
        csv.push_str(&format!("{name},s1,{},{},{},{},{}\n", r.s.mean, r.sps.mean, r.f.mean, r.cr.mean, r.es.mean));
        if matches!(kind, Ablation::Teacher) {
            let policy = s1.policy;
            let s2 = run_stage2(&cfg, policy.clone(), train.clone(), eval.clone(), Some(&dir))?;
            let spec = AgentSpec::Policy {
                policy: Arc::new(policy),
                source: LatentSource::Adapter(Arc::new(s2.adapter)),
                greedy: cfg.eval.greedy,
            };
            let env2 = eval_env(&cfg, PrivilegedMode::None);
            let r = report_for(&spec, &env2)?;
            csv.push_str(&format!("{name},s2,{},{},{},{},{}\n", r.s.mean, r.sps.mean, r.f.mean, r.cr.mean, r.es.mean));
        }
    }
    std::fs::write(out.join("ablation.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenScenes { count, seed, out, config } => gen_scenes(count, seed, &out, config.as_deref()),
        Command::TrainS1 {
            common,
            out,
            privileged,
            steps,
            traj_len,
        } => train_s1(&common, &out, privileged, steps, traj_len),
        Command::TrainS2 { common, policy, out, steps } => train_s2(&common, &policy, &out, steps),
        Command::Eval {
            common,
            mode,
            policy,
            adapter,
            privileged,
            protocol,
            episodes,
            seeds,
            out,
            logs,
        } => eval_cmd(
            &common,
            mode,
            policy.as_deref(),
            adapter.as_deref(),
            privileged,
            protocol,
            episodes,
            seeds,
            &out,
            logs,
        ),
        Command::Replay { log, scene, out } => replay(&log, scene.as_deref(), &out),
        Command::Ablate { common, kind, out, steps } => ablate(&common, kind, &out, steps),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                SimError::Numerical(_) => 3,
                _ => 2,
            })
        }
    }
}
