//! Connectivity and door-clearance oracles over generated floor plans.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sda_core::geometry::{Point, Segment};
use sda_core::grid::{plan_cells, NavGrid};
use sda_core::scenegen::{fully_connected, generate_scene, min_door_gap, SceneGenConfig, EVAL_SEED_BASE};
use sda_core::sim::BodyParams;

fn seeds() -> impl Iterator<Item = u64> {
    (0..40).chain(EVAL_SEED_BASE..EVAL_SEED_BASE + 20)
}

/// Breadth-first flood over the grid's move graph.
fn flood(grid: &NavGrid) -> (usize, usize) {
    let free: Vec<_> = grid.free_cells().collect();
    let mut seen = vec![false; grid.cols() * grid.rows()];
    let mut queue = VecDeque::from([free[0]]);
    seen[free[0].1 * grid.cols() + free[0].0] = true;
    let mut count = 0;
    while let Some(c) = queue.pop_front() {
        count += 1;
        for (n, _) in grid.neighbors(c) {
            let i = n.1 * grid.cols() + n.0;
            if !seen[i] {
                seen[i] = true;
                queue.push_back(n);
            }
        }
    }
    (count, free.len())
}

#[test]
fn every_free_cell_is_reachable() {
    let cfg = SceneGenConfig::default();
    let body = BodyParams::default();
    for seed in seeds() {
        let scene = generate_scene(seed, &cfg).unwrap();
        let grid = NavGrid::build(&scene, body.robot_radius.max(body.human_radius));
        let (reached, free) = flood(&grid);
        assert_eq!(reached, free, "seed {seed}");
        assert!(fully_connected(&grid));
        let cells: Vec<_> = grid.free_cells().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..10 {
            let a = cells[rng.random_range(0..cells.len())];
            let b = cells[rng.random_range(0..cells.len())];
            assert!(plan_cells(&grid, a, b).is_some(), "seed {seed}: {a:?} -> {b:?}");
        }
    }
}

fn point_segment(p: Point, s: &Segment) -> f64 {
    let d = s.b - s.a;
    let len2 = d.dot(d);
    let t = if len2 == 0.0 { 0.0 } else { ((p - s.a).dot(d) / len2).clamp(0.0, 1.0) };
    p.dist(s.a + d * t)
}

/// Distance between two non-crossing segments: the closest pair always
/// involves an endpoint.
fn wall_gap(a: &Segment, b: &Segment) -> f64 {
    [
        point_segment(a.a, b),
        point_segment(a.b, b),
        point_segment(b.a, a),
        point_segment(b.b, a),
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min)
}

#[test]
fn door_gaps_admit_four_robot_diameters() {
    let cfg = SceneGenConfig::default();
    let need = 4.0 * 2.0 * BodyParams::default().robot_radius;
    for seed in seeds() {
        let scene = generate_scene(seed, &cfg).unwrap();
        let walls: Vec<_> = scene.all_walls().copied().collect();
        let mut smallest = f64::INFINITY;
        for i in 0..walls.len() {
            for j in i + 1..walls.len() {
                let g = wall_gap(&walls[i], &walls[j]);
                if g > 1e-9 {
                    smallest = smallest.min(g);
                }
            }
        }
        assert!(smallest >= need - 1e-9, "seed {seed}: gap {smallest}");
        assert!(smallest >= 1.0);
        assert!((min_door_gap(&scene) - smallest).abs() < 1e-9);
    }
}
