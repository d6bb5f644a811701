//! Metrics recomputed from JSONL step logs must equal the online values.

use std::sync::Arc;

use sda_core::config::RunConfig;
use sda_core::env::Protocol;
use sda_core::eval::{evaluate_seed, metrics_from_log, parse_log, summarize, AgentSpec, LatentSource};
use sda_core::pipeline::default_worlds;
use sda_core::policy::{Policy, PolicyConfig};

fn check_purity(spec: &AgentSpec, cfg: &RunConfig, seed: u64, episodes: usize) -> usize {
    let (_, eval) = default_worlds(cfg).unwrap();
    let report = evaluate_seed(spec, &eval, &cfg.env, seed, episodes, &cfg.config_hash(), true).unwrap();
    let mut recomputed = Vec::new();
    for (run, online) in report.runs.iter().zip(&report.metrics) {
        let (header, records) = parse_log(&run.to_jsonl()).unwrap();
        assert_eq!(header.config_hash, cfg.config_hash());
        let m = metrics_from_log(&header, &records);
        assert_eq!(&m, online, "episode {}", header.episode);
        recomputed.push(m);
    }
    assert_eq!(summarize(&recomputed), report.summary);
    report.runs.len()
}

#[test]
fn metrics_recompute_exactly_from_logs() {
    let cfg = RunConfig::default();
    let policy = Policy::new(
        PolicyConfig {
            obs_hidden: 16,
            latent_dim: 8,
            gru_hidden: 16,
            ..cfg.policy.clone()
        },
        4,
    )
    .unwrap();
    let spec = AgentSpec::Policy {
        policy: Arc::new(policy),
        source: LatentSource::Privileged,
        greedy: false,
    };
    let strict = cfg.clone().with_protocol(Protocol::Strict);
    let mut n = 0;
    n += check_purity(&AgentSpec::Expert, &cfg, 0, 300);
    n += check_purity(&AgentSpec::Expert, &strict, 1, 200);
    n += check_purity(&AgentSpec::Random, &cfg, 2, 250);
    n += check_purity(&spec, &cfg, 3, 250);
    assert_eq!(n, 1000);
}

#[test]
fn evaluation_is_deterministic() {
    let cfg = RunConfig::default();
    let (_, eval) = default_worlds(&cfg).unwrap();
    let a = evaluate_seed(&AgentSpec::Random, &eval, &cfg.env, 9, 20, "h", true).unwrap();
    let b = evaluate_seed(&AgentSpec::Random, &eval, &cfg.env, 9, 20, "h", true).unwrap();
    assert_eq!(a.summary, b.summary);
    for (x, y) in a.runs.iter().zip(&b.runs) {
        assert_eq!(x.to_jsonl(), y.to_jsonl());
    }
}

#[test]
fn truncated_log_names_the_record() {
    let cfg = RunConfig::default();
    let (_, eval) = default_worlds(&cfg).unwrap();
    let r = evaluate_seed(&AgentSpec::Expert, &eval, &cfg.env, 0, 1, "h", true).unwrap();
    let text = r.runs[0].to_jsonl();
    let lines: Vec<&str> = text.lines().collect();
    let mut cut = lines[..6].join("\n");
    cut.push('\n');
    cut.push_str(&lines[6][..lines[6].len() / 2]);
    let err = parse_log(&cut).unwrap_err().to_string();
    assert!(err.contains("record 6"), "{err}");
    let skipped = [lines[0], lines[1], lines[3]].join("\n");
    let err = parse_log(&skipped).unwrap_err().to_string();
    assert!(err.contains("record 2"), "{err}");
}
