//! Static exports of a step log: an overhead SVG trace and a flat CSV.

use std::fmt::Write as _;

use crate::env::StepRecord;
use crate::eval::LogHeader;
use crate::sim::Scene;

/// Flat per-step table headed by the log's config hash and seed.
pub fn log_to_csv(header: &LogHeader, records: &[StepRecord]) -> String {
    let mut s = format!(
        "# config_hash={},seed={}\nt,robot_x,robot_y,robot_heading,human_x,human_y,action,distance,visible,bearing,following,collided,reward\n",
        header.config_hash, header.episode_seed
    );
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.t,
            r.robot.x,
            r.robot.y,
            r.robot.heading,
            r.human.x,
            r.human.y,
            r.action,
            r.distance,
            r.detection.visible as u8,
            r.bearing,
            r.following as u8,
            r.collided as u8,
            r.reward.total()
        );
    }
    s
}

const PX: f64 = 40.0;

fn polyline(points: impl Iterator<Item = (f64, f64)>, height: f64, color: &str) -> String {
    let pts: Vec<String> = points
        .map(|(x, y)| format!("{:.3},{:.3}", x * PX, (height - y) * PX))
        .collect();
    format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
        pts.join(" ")
    )
}

/// Overhead trace: walls (when the scene is known), robot path in blue,
/// human path in orange, following steps as green dots, collisions in red.
pub fn log_to_svg(header: &LogHeader, records: &[StepRecord], scene: Option<&Scene>) -> String {
    let (w, h) = match scene {
        Some(s) => (s.width(), s.height()),
        None => {
            let max = records
                .iter()
                .flat_map(|r| [r.robot.x, r.robot.y, r.human.x, r.human.y])
                .fold(1.0f64, f64::max);
            (max + 0.5, max + 0.5)
        }
    };
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0}\" height=\"{:.0}\" viewBox=\"0 0 {:.3} {:.3}\">\n",
        w * PX,
        h * PX,
        w * PX,
        h * PX
    );
    let _ = writeln!(
        s,
        "<!-- config_hash={} seed={} agent={} -->",
        header.config_hash, header.episode_seed, header.agent
    );
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    if let Some(scene) = scene {
        for wall in scene.all_walls() {
            let _ = writeln!(
                s,
                "<line x1=\"{:.3}\" y1=\"{:.3}\" x2=\"{:.3}\" y2=\"{:.3}\" stroke=\"black\" stroke-width=\"3\"/>",
                wall.a.x * PX,
                (h - wall.a.y) * PX,
                wall.b.x * PX,
                (h - wall.b.y) * PX
            );
        }
    }
    s.push_str(&polyline(records.iter().map(|r| (r.human.x, r.human.y)), h, "#e08a1e"));
    s.push_str(&polyline(records.iter().map(|r| (r.robot.x, r.robot.y)), h, "#1f5fbf"));
    for r in records.iter().filter(|r| r.following) {
        let _ = writeln!(
            s,
            "<circle cx=\"{:.3}\" cy=\"{:.3}\" r=\"2\" fill=\"#2a9d3a\"/>",
            r.robot.x * PX,
            (h - r.robot.y) * PX
        );
    }
    for r in records.iter().filter(|r| r.collided) {
        let _ = writeln!(
            s,
            "<circle cx=\"{:.3}\" cy=\"{:.3}\" r=\"6\" fill=\"none\" stroke=\"red\" stroke-width=\"2\"/>",
            r.robot.x * PX,
            (h - r.robot.y) * PX
        );
    }
    s.push_str("</svg>\n");
    s
}
