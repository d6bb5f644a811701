//! Procedural multi-room floor plans by recursive division.
//!
//! Every dividing wall keeps one door gap; a new wall is only accepted if it
//! stays at least a door width away from every wall it does not touch, so a
//! later wall can never narrow an earlier door.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::geometry::{segment_segment_distance, Point, Segment};
use crate::grid::NavGrid;
use crate::sim::{Scene, DEFAULT_CELL_SIZE};

/// First seed of the evaluation split; training scenes use seeds below it.
pub const EVAL_SEED_BASE: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneGenConfig {
    pub min_width: f64,
    pub max_width: f64,
    pub min_height: f64,
    pub max_height: f64,
    /// Smallest room side produced by a split.
    pub min_room: f64,
    pub door_width: f64,
    /// Split lines and doors snap to this spacing.
    pub snap: f64,
    pub max_depth: usize,
    /// Inflation radius used for the connectivity check.
    pub clearance_radius: f64,
    pub retries: usize,
}

impl Default for SceneGenConfig {
    fn default() -> Self {
        Self {
            min_width: 9.0,
            max_width: 13.0,
            min_height: 7.0,
            max_height: 10.0,
            min_room: 3.0,
            door_width: 2.0,
            snap: 0.5,
            max_depth: 3,
            clearance_radius: 0.25,
            retries: 32,
        }
    }
}

impl SceneGenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_width > 0.0 && self.min_width <= self.max_width && self.min_height > 0.0 && self.min_height <= self.max_height) {
            return Err(SimError::domain("scene size ranges are invalid"));
        }
        if !(self.door_width > 0.0 && self.snap > 0.0 && self.min_room >= self.door_width) {
            return Err(SimError::domain("need positive door and snap, and rooms at least one door wide"));
        }
        Ok(())
    }
}

fn snap_range<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64, step: f64) -> Option<f64> {
    let a = (lo / step).ceil() as i64;
    let b = (hi / step).floor() as i64;
    (a <= b).then(|| rng.random_range(a..=b) as f64 * step)
}

/// Wall pieces touching (distance 0) are joined; any other pair must be at
/// least `gap` apart.
fn clears(existing: &[Segment], new: &[Segment], gap: f64) -> bool {
    new.iter().all(|n| {
        existing.iter().all(|e| {
            let d = segment_segment_distance(n.a, n.b, e.a, e.b);
            d <= 1e-9 || d >= gap
        })
    })
}

struct Divider<'a, R> {
    cfg: &'a SceneGenConfig,
    rng: &'a mut R,
    walls: Vec<Segment>,
}

impl<R: Rng> Divider<'_, R> {
    fn divide(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, depth: usize) {
        let (w, h) = (x1 - x0, y1 - y0);
        let min_room = self.cfg.min_room;
        let can_v = w >= 2.0 * min_room;
        let can_h = h >= 2.0 * min_room;
        if depth >= self.cfg.max_depth || !(can_v || can_h) {
            return;
        }
        // stop early now and then so room sizes vary
        if depth > 0 && self.rng.random_bool(0.25) {
            return;
        }
        let vertical = match (can_v, can_h) {
            (true, true) => {
                if (w - h).abs() < 1.0 {
                    self.rng.random_bool(0.5)
                } else {
                    w > h
                }
            }
            (v, _) => v,
        };
        for _ in 0..8 {
            let (lo, hi, span_lo, span_hi) = if vertical {
                (x0 + min_room, x1 - min_room, y0, y1)
            } else {
                (y0 + min_room, y1 - min_room, x0, x1)
            };
            let Some(at) = snap_range(self.rng, lo, hi, self.cfg.snap) else {
                return;
            };
            let Some(door) = snap_range(self.rng, span_lo, span_hi - self.cfg.door_width, self.cfg.snap) else {
                return;
            };
            let door_end = door + self.cfg.door_width;
            let mk = |a: f64, b: f64| {
                if vertical {
                    Segment::new(Point::new(at, a), Point::new(at, b))
                } else {
                    Segment::new(Point::new(a, at), Point::new(b, at))
                }
            };
            let mut pieces = Vec::with_capacity(2);
            if door > span_lo + 1e-9 {
                pieces.push(mk(span_lo, door));
            }
            if door_end < span_hi - 1e-9 {
                pieces.push(mk(door_end, span_hi));
            }
            if !clears(&self.walls, &pieces, self.cfg.door_width) {
                continue;
            }
            self.walls.extend(pieces);
            if vertical {
                self.divide(x0, y0, at, y1, depth + 1);
                self.divide(at, y0, x1, y1, depth + 1);
            } else {
                self.divide(x0, y0, x1, at, depth + 1);
                self.divide(x0, at, x1, y1, depth + 1);
            }
            return;
        }
    }
}

/// True when every free cell reaches every other free cell.
pub fn fully_connected(grid: &NavGrid) -> bool {
    let free: Vec<_> = grid.free_cells().collect();
    match free.first() {
        None => false,
        Some(&s) => grid.reachable_count(s) == free.len(),
    }
}

/// Deterministic floor plan for `seed`.
pub fn generate_scene(seed: u64, cfg: &SceneGenConfig) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..cfg.retries.max(1) {
        let w = snap_range(&mut rng, cfg.min_width, cfg.max_width, cfg.snap).unwrap_or(cfg.min_width);
        let h = snap_range(&mut rng, cfg.min_height, cfg.max_height, cfg.snap).unwrap_or(cfg.min_height);
        let boundary = vec![
            Segment::new(Point::new(0.0, 0.0), Point::new(w, 0.0)),
            Segment::new(Point::new(w, 0.0), Point::new(w, h)),
            Segment::new(Point::new(w, h), Point::new(0.0, h)),
            Segment::new(Point::new(0.0, h), Point::new(0.0, 0.0)),
        ];
        let mut d = Divider {
            cfg,
            rng: &mut rng,
            walls: boundary,
        };
        d.divide(0.0, 0.0, w, h, 0);
        let walls = d.walls.split_off(4);
        let scene = Scene::new(w, h, walls, DEFAULT_CELL_SIZE)?;
        if fully_connected(&NavGrid::build(&scene, cfg.clearance_radius)) {
            return Ok(scene);
        }
    }
    Err(SimError::domain(format!(
        "scene seed {seed}: no connected layout after {} attempts",
        cfg.retries
    )))
}

/// Scenes for seeds `base..base+count`.
pub fn generate_split(base: u64, count: usize, cfg: &SceneGenConfig) -> Result<Vec<Scene>> {
    (0..count as u64).map(|i| generate_scene(base + i, cfg)).collect()
}

/// Smallest distance between two wall pieces (boundary included) that do
/// not touch; infinite when every pair touches.
pub fn min_door_gap(scene: &Scene) -> f64 {
    let walls: Vec<Segment> = scene.all_walls().copied().collect();
    let mut best = f64::INFINITY;
    for i in 0..walls.len() {
        for j in i + 1..walls.len() {
            let d = segment_segment_distance(walls[i].a, walls[i].b, walls[j].a, walls[j].b);
            if d > 1e-9 {
                best = best.min(d);
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_scene() {
        let cfg = SceneGenConfig::default();
        let a = generate_scene(7, &cfg).unwrap();
        let b = generate_scene(7, &cfg).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn scenes_have_rooms() {
        let cfg = SceneGenConfig::default();
        let with_walls = (0..20).filter(|s| !generate_scene(*s, &cfg).unwrap().walls().is_empty()).count();
        assert!(with_walls >= 15);
    }
}
