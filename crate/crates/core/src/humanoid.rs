//! Scripted humanoid walker and its trajectory history.

use std::collections::VecDeque;

use rand::Rng;

use crate::geometry::Point;
use crate::grid::{plan_cells, Cell, NavGrid};
use crate::sim::Pose;

/// Distance at which a waypoint counts as reached.
pub const ARRIVAL_TOLERANCE: f64 = 0.1;

/// Non-reactive walker following A* routes between random goals.
#[derive(Debug, Clone, PartialEq)]
pub struct HumanoidScript {
    pub waypoints: Vec<Point>,
    pub current_index: usize,
    pub pose: Pose,
    pub speed: f64,
    /// Goal draws are retried when they land closer than this (meters).
    pub min_goal_distance: f64,
}

impl HumanoidScript {
    /// Starts at `start` and immediately plans toward a random goal.
    pub fn new<R: Rng + ?Sized>(grid: &NavGrid, start: Point, speed: f64, rng: &mut R) -> Self {
        let mut s = Self {
            waypoints: Vec::new(),
            current_index: 0,
            pose: Pose::new(start.x, start.y, 0.0),
            speed,
            min_goal_distance: 2.0,
        };
        s.replan(grid, rng);
        s
    }

    pub fn position(&self) -> Point {
        self.pose.position()
    }

    pub fn current_target(&self) -> Option<Point> {
        self.waypoints.get(self.current_index).copied()
    }

    /// Draws a new random reachable goal and plans a route to it. Draw order
    /// is fixed so the result depends only on the generator state.
    pub fn replan<R: Rng + ?Sized>(&mut self, grid: &NavGrid, rng: &mut R) {
        let free: Vec<Cell> = grid.free_cells().collect();
        let Some(here) = grid.nearest_free(self.position()) else {
            self.waypoints.clear();
            self.current_index = 0;
            return;
        };
        for attempt in 0..64 {
            let goal = free[rng.random_range(0..free.len())];
            let far_enough = grid.center(goal).dist(self.position()) >= self.min_goal_distance;
            if goal == here || (!far_enough && attempt < 48) {
                continue;
            }
            if let Some(path) = plan_cells(grid, here, goal) {
                self.waypoints = path.waypoints;
                self.current_index = 0;
                return;
            }
        }
        self.waypoints.clear();
        self.current_index = 0;
    }
}

/// Advances the walker by `speed · dt` toward its current waypoint (never
/// overshooting it). Within [`ARRIVAL_TOLERANCE`] the next waypoint becomes
/// current; after the last one a new goal is drawn from `rng`.
pub fn step_humanoid<R: Rng + ?Sized>(script: &mut HumanoidScript, grid: &NavGrid, dt: f64, rng: &mut R) {
    let Some(target) = script.current_target() else {
        script.replan(grid, rng);
        return;
    };
    let pos = script.position();
    let delta = target - pos;
    let dist = delta.norm();
    let step = script.speed * dt;
    let next = if dist <= step {
        target
    } else {
        pos + delta * (step / dist)
    };
    let heading = if dist > 0.0 {
        delta.y.atan2(delta.x)
    } else {
        script.pose.heading
    };
    script.pose = Pose::new(next.x, next.y, heading);
    if next.dist(target) <= ARRIVAL_TOLERANCE {
        script.current_index += 1;
        if script.current_index >= script.waypoints.len() {
            script.replan(grid, rng);
        }
    }
}

/// Last `capacity` humanoid positions, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBuffer {
    positions: VecDeque<Point>,
    capacity: usize,
}

impl TrajectoryBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "trajectory buffer needs capacity");
        Self {
            positions: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn clear(&mut self) {
        self.positions.clear();
    }

    pub fn push(&mut self, p: Point) {
        if self.positions.len() == self.capacity {
            self.positions.pop_front();
        }
        self.positions.push_back(p);
    }

    /// Stored positions without padding.
    pub fn raw(&self) -> impl Iterator<Item = &Point> {
        self.positions.iter()
    }

    /// Exactly `capacity` positions: missing leading slots repeat the earliest
    /// stored one. An empty buffer reads as the origin.
    pub fn read(&self) -> Vec<Point> {
        let first = self.positions.front().copied().unwrap_or_default();
        let pad = self.capacity - self.positions.len();
        std::iter::repeat_n(first, pad)
            .chain(self.positions.iter().copied())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Scene;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn padding_repeats_earliest() {
        let mut b = TrajectoryBuffer::new(3);
        b.push(Point::new(1.0, 2.0));
        assert_eq!(b.len(), 1);
        assert_eq!(b.read(), vec![Point::new(1.0, 2.0); 3]);
    }

    #[test]
    fn full_buffer_evicts_oldest() {
        let mut b = TrajectoryBuffer::new(3);
        for i in 0..4 {
            b.push(Point::new(i as f64, 0.0));
        }
        let xs: Vec<f64> = b.read().iter().map(|p| p.x).collect();
        assert_eq!(xs, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn keeps_last_twenty() {
        let mut b = TrajectoryBuffer::new(20);
        for i in 0..25 {
            b.push(Point::new(i as f64, -(i as f64)));
        }
        let xs: Vec<f64> = b.read().iter().map(|p| p.x).collect();
        assert_eq!(xs, (5..25).map(|i| i as f64).collect::<Vec<_>>());
    }

    #[test]
    fn walks_toward_waypoint() {
        let scene = Scene::empty(5.0, 3.0).unwrap();
        let grid = NavGrid::build(&scene, 0.25);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = HumanoidScript {
            waypoints: vec![Point::new(2.0, 1.0)],
            current_index: 0,
            pose: Pose::new(1.0, 1.0, 0.0),
            speed: 0.9,
            min_goal_distance: 2.0,
        };
        step_humanoid(&mut s, &grid, 0.1, &mut rng);
        assert!((s.pose.x - 1.09).abs() < 1e-12);
        assert_eq!(s.pose.y, 1.0);
    }

    #[test]
    fn resampling_is_seed_deterministic() {
        let scene = Scene::empty(6.0, 6.0).unwrap();
        let grid = NavGrid::build(&scene, 0.25);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s = HumanoidScript {
                waypoints: vec![Point::new(2.0, 1.0)],
                current_index: 0,
                pose: Pose::new(1.95, 1.0, 0.0),
                speed: 0.9,
                min_goal_distance: 2.0,
            };
            step_humanoid(&mut s, &grid, 0.1, &mut rng);
            s
        };
        let a = run(5);
        assert_eq!(a.current_index, 0);
        assert!(!a.waypoints.is_empty());
        assert_ne!(a.waypoints, vec![Point::new(2.0, 1.0)]);
        assert_eq!(a, run(5));
    }
}
