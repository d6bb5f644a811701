//! Occupancy grid and 8-connected shortest paths.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use crate::error::{Result, SimError};
use crate::geometry::{point_segment_distance, segment_segment_distance, Point};
use crate::sim::Scene;

pub type Cell = (usize, usize);

/// Free/occupied cells at `cell_size` resolution. A cell is free iff a disc
/// of the inflation radius at its center touches no wall (boundary included).
#[derive(Debug, Clone, PartialEq)]
pub struct NavGrid {
    cols: usize,
    rows: usize,
    cell_size: f64,
    free: Vec<bool>,
    /// Bit `d` set when the move in direction `DIRS[d]` clears every wall.
    edges: Vec<u8>,
}

const DIRS: [(i64, i64); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
];

const SQRT2: f64 = std::f64::consts::SQRT_2;

impl NavGrid {
    pub fn build(scene: &Scene, radius: f64) -> Self {
        let cell_size = scene.nav_cell_size();
        let cols = (scene.width() / cell_size).floor() as usize;
        let rows = (scene.height() / cell_size).floor() as usize;
        let mut free = vec![false; cols * rows];
        for r in 0..rows {
            for c in 0..cols {
                let p = Point::new((c as f64 + 0.5) * cell_size, (r as f64 + 0.5) * cell_size);
                free[r * cols + c] = scene
                    .all_walls()
                    .all(|w| point_segment_distance(p, w.a, w.b) > radius);
            }
        }
        let mut grid = Self {
            cols,
            rows,
            cell_size,
            free,
            edges: vec![0; cols * rows],
        };
        let walls: Vec<_> = scene.all_walls().copied().collect();
        for r in 0..rows {
            for c in 0..cols {
                if !grid.free[r * cols + c] {
                    continue;
                }
                let a = grid.center((c, r));
                let mut mask = 0u8;
                for (d, &(dc, dr)) in DIRS.iter().enumerate() {
                    let (nc, nr) = (c as i64 + dc, r as i64 + dr);
                    if nc < 0 || nr < 0 || !grid.is_free((nc as usize, nr as usize)) {
                        continue;
                    }
                    let b = grid.center((nc as usize, nr as usize));
                    if walls.iter().all(|w| segment_segment_distance(a, b, w.a, w.b) > radius) {
                        mask |= 1 << d;
                    }
                }
                grid.edges[r * cols + c] = mask;
            }
        }
        grid
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn cell_of(&self, p: Point) -> Option<Cell> {
        if p.x < 0.0 || p.y < 0.0 {
            return None;
        }
        let c = (p.x / self.cell_size).floor() as usize;
        let r = (p.y / self.cell_size).floor() as usize;
        (c < self.cols && r < self.rows).then_some((c, r))
    }

    pub fn center(&self, (c, r): Cell) -> Point {
        Point::new(
            (c as f64 + 0.5) * self.cell_size,
            (r as f64 + 0.5) * self.cell_size,
        )
    }

    pub fn is_free(&self, (c, r): Cell) -> bool {
        c < self.cols && r < self.rows && self.free[r * self.cols + c]
    }

    pub fn free_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.rows)
            .flat_map(move |r| (0..self.cols).map(move |c| (c, r)))
            .filter(|cell| self.is_free(*cell))
    }

    fn index(&self, (c, r): Cell) -> usize {
        r * self.cols + c
    }

    /// 8-connected neighbours with step cost in cells. A move must keep the
    /// inflation clearance along its whole length, and diagonal moves need
    /// both orthogonal cells free (no corner cutting).
    pub fn neighbors(&self, (c, r): Cell) -> impl Iterator<Item = (Cell, f64)> + '_ {
        let mask = if self.is_free((c, r)) { self.edges[self.index((c, r))] } else { 0 };
        DIRS.iter().enumerate().filter_map(move |(d, &(dc, dr))| {
            if mask & (1 << d) == 0 {
                return None;
            }
            let nc = c as i64 + dc;
            let nr = r as i64 + dr;
            if nc < 0 || nr < 0 {
                return None;
            }
            let n = (nc as usize, nr as usize);
            if !self.is_free(n) {
                return None;
            }
            if dc != 0 && dr != 0 {
                let a = (nc as usize, r);
                let b = (c, nr as usize);
                if !self.is_free(a) || !self.is_free(b) {
                    return None;
                }
                Some((n, SQRT2))
            } else {
                Some((n, 1.0))
            }
        })
    }

    /// Free cell whose center is closest to `p`.
    pub fn nearest_free(&self, p: Point) -> Option<Cell> {
        let cx = ((p.x / self.cell_size).floor().max(0.0) as usize).min(self.cols.saturating_sub(1));
        let cy = ((p.y / self.cell_size).floor().max(0.0) as usize).min(self.rows.saturating_sub(1));
        let start = (cx, cy);
        if self.is_free(start) {
            return Some(start);
        }
        self.free_cells()
            .map(|c| (self.center(c).dist(p), c))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, c)| c)
    }

    /// Number of free cells reachable from `start` (4-connectivity suffices
    /// for reachability since diagonal moves need orthogonal support).
    pub fn reachable_count(&self, start: Cell) -> usize {
        if !self.is_free(start) {
            return 0;
        }
        let mut seen = vec![false; self.cols * self.rows];
        let mut q = VecDeque::from([start]);
        seen[self.index(start)] = true;
        let mut n = 0;
        while let Some(cell) = q.pop_front() {
            n += 1;
            for (nb, _) in self.neighbors(cell) {
                if !seen[self.index(nb)] {
                    seen[self.index(nb)] = true;
                    q.push_back(nb);
                }
            }
        }
        n
    }
}

/// Planned route: cell-center waypoints after the start cell, ending at the
/// goal cell, and the route length in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPath {
    pub cells: Vec<Cell>,
    pub waypoints: Vec<Point>,
    pub cost: f64,
}

#[derive(PartialEq)]
struct Open {
    f: f64,
    g: f64,
    idx: usize,
}

impl Eq for Open {}

impl Ord for Open {
    fn cmp(&self, o: &Self) -> Ordering {
        // min-heap on f, then larger g, then lower index for determinism
        o.f.total_cmp(&self.f)
            .then_with(|| self.g.total_cmp(&o.g))
            .then_with(|| o.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

fn octile(a: Cell, b: Cell) -> f64 {
    let dx = (a.0 as f64 - b.0 as f64).abs();
    let dy = (a.1 as f64 - b.1 as f64).abs();
    dx.max(dy) + (SQRT2 - 1.0) * dx.min(dy)
}

/// A* between the cells containing `start` and `goal`. `Ok(None)` when the
/// goal is unreachable.
pub fn plan_path(grid: &NavGrid, start: Point, goal: Point) -> Result<Option<GridPath>> {
    let s = grid
        .cell_of(start)
        .filter(|c| grid.is_free(*c))
        .ok_or_else(|| SimError::domain(format!("start {start:?} is not on a free cell")))?;
    let g = grid
        .cell_of(goal)
        .filter(|c| grid.is_free(*c))
        .ok_or_else(|| SimError::domain(format!("goal {goal:?} is not on a free cell")))?;
    Ok(plan_cells(grid, s, g))
}

pub fn plan_cells(grid: &NavGrid, s: Cell, g: Cell) -> Option<GridPath> {
    let n = grid.cols * grid.rows;
    let mut cost = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();
    let si = grid.index(s);
    let gi = grid.index(g);
    cost[si] = 0.0;
    open.push(Open {
        f: octile(s, g),
        g: 0.0,
        idx: si,
    });
    while let Some(Open { idx, .. }) = open.pop() {
        if closed[idx] {
            continue;
        }
        closed[idx] = true;
        if idx == gi {
            break;
        }
        let cell = (idx % grid.cols, idx / grid.cols);
        for (nb, step) in grid.neighbors(cell) {
            let ni = grid.index(nb);
            let c = cost[idx] + step;
            if c < cost[ni] {
                cost[ni] = c;
                parent[ni] = idx;
                open.push(Open {
                    f: c + octile(nb, g),
                    g: c,
                    idx: ni,
                });
            }
        }
    }
    if !cost[gi].is_finite() {
        return None;
    }
    let mut cells = Vec::new();
    let mut i = gi;
    while i != si {
        cells.push((i % grid.cols, i / grid.cols));
        i = parent[i];
    }
    cells.reverse();
    Some(GridPath {
        waypoints: cells.iter().map(|c| grid.center(*c)).collect(),
        cells,
        cost: cost[gi] * grid.cell_size,
    })
}

/// Geodesic distance between two points in meters: grid route between their
/// nearest free cells plus the straight offsets to those cell centers.
pub fn geodesic_distance(grid: &NavGrid, a: Point, b: Point) -> Option<f64> {
    let ca = grid.nearest_free(a)?;
    let cb = grid.nearest_free(b)?;
    if ca == cb {
        return Some(a.dist(b));
    }
    let path = plan_cells(grid, ca, cb)?;
    Some(path.cost + a.dist(grid.center(ca)) + b.dist(grid.center(cb)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Segment;

    fn unit_grid(w: f64, h: f64, walls: Vec<Segment>) -> NavGrid {
        let s = Scene::new(w, h, walls, 1.0).unwrap();
        NavGrid::build(&s, 0.25)
    }

    #[test]
    fn straight_corridor() {
        let g = unit_grid(6.0, 3.0, vec![]);
        let p = plan_path(&g, Point::new(1.0, 1.0), Point::new(4.0, 1.0))
            .unwrap()
            .unwrap();
        assert_eq!(p.cells.len(), 3);
        assert!((p.cost - 3.0).abs() < 1e-12);
        assert_eq!(*p.waypoints.last().unwrap(), Point::new(4.5, 1.5));
    }

    #[test]
    fn enclosed_goal_is_unreachable() {
        let box_walls = vec![
            Segment::new(Point::new(6.0, 6.0), Point::new(9.0, 6.0)),
            Segment::new(Point::new(9.0, 6.0), Point::new(9.0, 9.0)),
            Segment::new(Point::new(9.0, 9.0), Point::new(6.0, 9.0)),
            Segment::new(Point::new(6.0, 9.0), Point::new(6.0, 6.0)),
        ];
        let g = unit_grid(10.0, 10.0, box_walls);
        assert!(plan_path(&g, Point::new(1.5, 1.5), Point::new(7.5, 7.5))
            .unwrap()
            .is_none());
    }

    #[test]
    fn occupied_endpoint_is_domain_error() {
        let g = unit_grid(10.0, 10.0, vec![Segment::new(Point::new(3.5, 0.0), Point::new(3.5, 9.0))]);
        assert!(matches!(
            plan_path(&g, Point::new(3.5, 3.5), Point::new(1.5, 1.5)),
            Err(SimError::Domain(_))
        ));
    }

    #[test]
    fn no_corner_cutting() {
        let g = unit_grid(4.0, 4.0, vec![Segment::new(Point::new(2.0, 1.9), Point::new(2.0, 2.1))]);
        // a short stub blocks only the cells near it; diagonals around it must be refused
        for cell in g.free_cells() {
            for (nb, step) in g.neighbors(cell) {
                if step > 1.0 {
                    assert!(g.is_free((nb.0, cell.1)) && g.is_free((cell.0, nb.1)));
                }
            }
        }
    }
}
