//! Static 2D world: walls, robot kinematics, ray casting, visibility and
//! contact tests. All operations are pure.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::geometry::{
    normalize_angle, ray_segment, segment_segment_distance, segments_intersect, Point, Segment,
};

pub const DEFAULT_CELL_SIZE: f64 = 0.25;

/// Walls inside a rectangular `[0, width] × [0, height]` region. The region
/// boundary acts as four implicit walls.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    width: f64,
    height: f64,
    walls: Vec<Segment>,
    boundary: [Segment; 4],
    nav_cell_size: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneFile {
    bounds: [f64; 2],
    walls: Vec<[f64; 4]>,
    #[serde(default = "default_cell")]
    nav_cell_size: f64,
}

fn default_cell() -> f64 {
    DEFAULT_CELL_SIZE
}

impl Scene {
    pub fn new(width: f64, height: f64, walls: Vec<Segment>, nav_cell_size: f64) -> Result<Self> {
        if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
            return Err(SimError::domain(format!("degenerate bounds {width}×{height}")));
        }
        if !(nav_cell_size > 0.0) {
            return Err(SimError::domain("nav_cell_size must be positive"));
        }
        let inside = |p: Point| p.x >= 0.0 && p.x <= width && p.y >= 0.0 && p.y <= height;
        if let Some(w) = walls.iter().find(|w| !inside(w.a) || !inside(w.b)) {
            return Err(SimError::domain(format!("wall {w:?} leaves the bounds")));
        }
        let c = [
            Point::new(0.0, 0.0),
            Point::new(width, 0.0),
            Point::new(width, height),
            Point::new(0.0, height),
        ];
        Ok(Self {
            width,
            height,
            walls,
            boundary: [
                Segment::new(c[0], c[1]),
                Segment::new(c[1], c[2]),
                Segment::new(c[2], c[3]),
                Segment::new(c[3], c[0]),
            ],
            nav_cell_size,
        })
    }

    pub fn empty(width: f64, height: f64) -> Result<Self> {
        Self::new(width, height, Vec::new(), DEFAULT_CELL_SIZE)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: SceneFile = serde_json::from_str(text)?;
        let walls = f
            .walls
            .iter()
            .map(|w| Segment::new(Point::new(w[0], w[1]), Point::new(w[2], w[3])))
            .collect();
        Self::new(f.bounds[0], f.bounds[1], walls, f.nav_cell_size)
    }

    pub fn to_json(&self) -> String {
        let f = SceneFile {
            bounds: [self.width, self.height],
            walls: self
                .walls
                .iter()
                .map(|w| [w.a.x, w.a.y, w.b.x, w.b.y])
                .collect(),
            nav_cell_size: self.nav_cell_size,
        };
        serde_json::to_string(&f).expect("scene serializes")
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn diagonal(&self) -> f64 {
        self.width.hypot(self.height)
    }

    pub fn nav_cell_size(&self) -> f64 {
        self.nav_cell_size
    }

    /// Interior walls only.
    pub fn walls(&self) -> &[Segment] {
        &self.walls
    }

    /// Interior walls followed by the four boundary edges.
    pub fn all_walls(&self) -> impl Iterator<Item = &Segment> {
        self.walls.iter().chain(self.boundary.iter())
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= 0.0 && p.x <= self.width && p.y >= 0.0 && p.y <= self.height
    }

    /// Distance from `p` to the nearest wall or boundary edge.
    pub fn clearance(&self, p: Point) -> f64 {
        self.all_walls()
            .map(|w| crate::geometry::point_segment_distance(p, w.a, w.b))
            .fold(f64::INFINITY, f64::min)
    }

    /// Same scene with every coordinate shifted by `d` and bounds grown to
    /// keep it inside. Used for translation-invariance checks.
    pub fn translated(&self, d: Point) -> Result<Self> {
        let walls = self
            .walls
            .iter()
            .map(|w| Segment::new(w.a + d, w.b + d))
            .collect();
        let mut s = Self::new(self.width + d.x, self.height + d.y, walls, self.nav_cell_size)?;
        // the original region becomes [d, d+size]; its boundary is now explicit
        let c = [
            d,
            Point::new(d.x + self.width, d.y),
            Point::new(d.x + self.width, d.y + self.height),
            Point::new(d.x, d.y + self.height),
        ];
        for i in 0..4 {
            s.walls.push(Segment::new(c[i], c[(i + 1) % 4]));
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    /// Radians in `(-π, π]`.
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: normalize_angle(heading),
        }
    }

    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }

    /// Expresses a world point in this pose's frame: `(forward, left)`.
    pub fn to_local(&self, p: Point) -> Point {
        let d = p - self.position();
        let (s, c) = self.heading.sin_cos();
        Point::new(c * d.x + s * d.y, -s * d.x + c * d.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BodyParams {
    pub robot_radius: f64,
    pub human_radius: f64,
    pub robot_max_lin_speed: f64,
    pub robot_max_ang_speed: f64,
    pub human_speed: f64,
    pub dt: f64,
}

impl Default for BodyParams {
    fn default() -> Self {
        Self {
            robot_radius: 0.25,
            human_radius: 0.25,
            robot_max_lin_speed: 1.0,
            robot_max_ang_speed: PI / 2.0,
            human_speed: 0.9,
            dt: 0.1,
        }
    }
}

impl BodyParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.robot_radius,
            self.human_radius,
            self.robot_max_lin_speed,
            self.robot_max_ang_speed,
            self.human_speed,
            self.dt,
        ];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(SimError::domain("body parameters must be positive"))
        }
    }

    pub fn collision_distance(&self) -> f64 {
        self.robot_radius + self.human_radius
    }
}

/// One range per ray (angles relative to `origin.heading`): the nearest wall
/// hit, or `max_range` when nothing is hit within range.
pub fn ray_cast(scene: &Scene, origin: Pose, ray_angles: &[f64], max_range: f64) -> Result<Vec<f64>> {
    let o = origin.position();
    if !scene.contains(o) {
        return Err(SimError::domain(format!("ray origin {o:?} outside scene bounds")));
    }
    if !(max_range > 0.0) {
        return Err(SimError::domain("max_range must be positive"));
    }
    Ok(ray_angles
        .iter()
        .map(|off| {
            let dir = Point::from_polar(1.0, origin.heading + off);
            scene
                .all_walls()
                .filter_map(|w| ray_segment(o, dir, w.a, w.b))
                .fold(max_range, f64::min)
        })
        .collect())
}

/// True iff the closed segment `a → b` touches no interior wall.
pub fn line_of_sight(scene: &Scene, a: Point, b: Point) -> bool {
    !scene
        .walls()
        .iter()
        .any(|w| segments_intersect(a, b, w.a, w.b))
}

/// Unicycle step: rotate first, then translate along the new heading. A
/// translation whose swept disc would come closer than `robot_radius` to any
/// wall is dropped entirely; the rotation still applies.
pub fn step_robot(scene: &Scene, pose: Pose, body: &BodyParams, lin_vel: f64, ang_vel: f64) -> Pose {
    let lin = lin_vel.clamp(-body.robot_max_lin_speed, body.robot_max_lin_speed);
    let ang = ang_vel.clamp(-body.robot_max_ang_speed, body.robot_max_ang_speed);
    let heading = normalize_angle(pose.heading + ang * body.dt);
    let from = pose.position();
    let to = from + Point::from_polar(lin * body.dt, heading);
    if lin == 0.0 || motion_blocked(scene, from, to, body.robot_radius) {
        return Pose {
            x: pose.x,
            y: pose.y,
            heading,
        };
    }
    Pose {
        x: to.x,
        y: to.y,
        heading,
    }
}

fn motion_blocked(scene: &Scene, from: Point, to: Point, radius: f64) -> bool {
    scene
        .all_walls()
        .any(|w| segment_segment_distance(from, to, w.a, w.b) < radius)
}

/// Strict: discs exactly touching do not collide.
pub fn check_collision(robot: Point, human: Point, body: &BodyParams) -> bool {
    robot.dist(human) < body.collision_distance()
}
