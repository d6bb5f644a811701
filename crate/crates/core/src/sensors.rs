//! Robot perception (depth rays, humanoid detection) and the privileged
//! humanoid signals available only in simulation.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::geometry::Point;
use crate::humanoid::TrajectoryBuffer;
use crate::sim::{line_of_sight, ray_cast, BodyParams, Pose, Scene};

/// Width of the detection block in [`Observation::features`].
pub const DETECTION_WIDTH: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorConfig {
    pub num_rays: usize,
    /// Full field of view in radians.
    pub fov: f64,
    pub max_range: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            num_rays: 64,
            fov: 2.0 * PI / 3.0,
            max_range: 5.0,
        }
    }
}

impl SensorConfig {
    /// Ray offsets evenly spaced over `[-fov/2, fov/2]`.
    pub fn ray_angles(&self) -> Vec<f64> {
        let n = self.num_rays;
        if n == 1 {
            return vec![0.0];
        }
        (0..n)
            .map(|i| -self.fov / 2.0 + self.fov * i as f64 / (n - 1) as f64)
            .collect()
    }

    /// Width of the encoder input: depth rays plus the detection block.
    pub fn feature_width(&self) -> usize {
        self.num_rays + DETECTION_WIDTH
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Detection {
    pub visible: bool,
    /// Robot-frame bearing in radians.
    pub bearing: f64,
    /// Center distance divided by the sensor range.
    pub distance: f64,
    /// Angle subtended by the human disc.
    pub angular_size: f64,
}

impl Detection {
    pub const NONE: Detection = Detection {
        visible: false,
        bearing: 0.0,
        distance: 0.0,
        angular_size: 0.0,
    };

    pub fn features(&self) -> [f64; DETECTION_WIDTH] {
        [
            if self.visible { 1.0 } else { 0.0 },
            self.bearing / PI,
            self.distance,
            self.angular_size,
        ]
    }
}

/// Detection of a human disc at `human` as seen from `robot`.
pub fn detect(scene: &Scene, robot: Pose, human: Point, body: &BodyParams, cfg: &SensorConfig) -> Detection {
    let local = robot.to_local(human);
    let dist = local.norm();
    let bearing = if dist > 0.0 { local.y.atan2(local.x) } else { 0.0 };
    let visible = bearing.abs() <= cfg.fov / 2.0
        && dist <= cfg.max_range
        && line_of_sight(scene, robot.position(), human);
    if !visible {
        return Detection::NONE;
    }
    let angular_size = if dist > body.human_radius {
        2.0 * (body.human_radius / dist).asin()
    } else {
        PI
    };
    Detection {
        visible,
        bearing,
        distance: dist / cfg.max_range,
        angular_size,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Ray ranges divided by the sensor range, in `[0, 1]`.
    pub depth: Vec<f64>,
    pub detection: Detection,
    pub prev_action: usize,
}

impl Observation {
    /// Encoder input: depth followed by the detection block.
    pub fn features(&self) -> Vec<f64> {
        let mut f = Vec::with_capacity(self.depth.len() + DETECTION_WIDTH);
        f.extend_from_slice(&self.depth);
        f.extend_from_slice(&self.detection.features());
        f
    }

    /// Full fixed-width vector: features followed by the previous action one-hot.
    pub fn to_vec(&self, num_actions: usize) -> Vec<f64> {
        let mut v = self.features();
        v.extend(one_hot(self.prev_action, num_actions));
        v
    }
}

pub fn one_hot(index: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    if index < n {
        v[index] = 1.0;
    }
    v
}

pub fn observe(
    scene: &Scene,
    robot: Pose,
    human: Point,
    body: &BodyParams,
    prev_action: usize,
    cfg: &SensorConfig,
) -> Result<Observation> {
    let ranges = ray_cast(scene, robot, &cfg.ray_angles(), cfg.max_range)?;
    Ok(Observation {
        depth: ranges.iter().map(|r| r / cfg.max_range).collect(),
        detection: detect(scene, robot, human, body, cfg),
        prev_action,
    })
}

/// Polar position of the human relative to the robot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumanoidGps {
    pub radius: f64,
    /// Radians in `(-π, π]` from the robot heading; 0 at zero radius.
    pub azimuth: f64,
}

pub fn humanoid_gps(robot: Pose, human: Point) -> HumanoidGps {
    let local = robot.to_local(human);
    let radius = robot.position().dist(human);
    let azimuth = if radius > 0.0 {
        local.y.atan2(local.x)
    } else {
        0.0
    };
    HumanoidGps { radius, azimuth }
}

/// Which privileged signal feeds the trajectory encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrivilegedMode {
    /// No privileged input: the latent is held at zero.
    None,
    Traj,
    Hgps,
    Both,
}

impl PrivilegedMode {
    /// Width of the privileged vector for a trajectory of `n` positions.
    pub fn width(self, n: usize) -> usize {
        match self {
            PrivilegedMode::None => 0,
            PrivilegedMode::Traj => 2 * n,
            PrivilegedMode::Hgps => 2,
            PrivilegedMode::Both => 2 * n + 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PrivilegedMode::None => "none",
            PrivilegedMode::Traj => "traj",
            PrivilegedMode::Hgps => "hgps",
            PrivilegedMode::Both => "both",
        }
    }
}

impl fmt::Display for PrivilegedMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PrivilegedMode {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PrivilegedMode::None),
            "traj" => Ok(PrivilegedMode::Traj),
            "hgps" => Ok(PrivilegedMode::Hgps),
            "both" => Ok(PrivilegedMode::Both),
            other => Err(SimError::domain(format!("unknown privileged mode `{other}`"))),
        }
    }
}

/// Flat privileged input. `traj`: padded positions scaled by the scene bounds
/// into `[0,1]²`, oldest first; `hgps`: `[radius / diagonal, azimuth / π]`;
/// `both`: trajectory entries then hGPS.
pub fn privileged_vector(
    mode: PrivilegedMode,
    buf: &TrajectoryBuffer,
    gps: &HumanoidGps,
    scene: &Scene,
) -> Result<Vec<f64>> {
    let traj = || {
        buf.read()
            .iter()
            .flat_map(|p| [p.x / scene.width(), p.y / scene.height()])
            .collect::<Vec<f64>>()
    };
    let hgps = || vec![gps.radius / scene.diagonal(), gps.azimuth / PI];
    match mode {
        PrivilegedMode::None => Err(SimError::domain(
            "privileged mode `none` has no privileged vector",
        )),
        PrivilegedMode::Traj => Ok(traj()),
        PrivilegedMode::Hgps => Ok(hgps()),
        PrivilegedMode::Both => {
            let mut v = traj();
            v.extend(hgps());
            Ok(v)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Segment;

    #[test]
    fn human_ahead_is_detected() {
        let s = Scene::empty(10.0, 10.0).unwrap();
        let b = BodyParams::default();
        let o = observe(&s, Pose::new(5.0, 5.0, 0.0), Point::new(7.0, 5.0), &b, 0, &SensorConfig::default()).unwrap();
        let d = o.detection;
        assert!(d.visible);
        assert_eq!(d.bearing, 0.0);
        assert!((d.distance - 0.4).abs() < 1e-12);
        assert!((d.angular_size - 2.0 * (0.25f64 / 2.0).asin()).abs() < 1e-12);
        assert_eq!(o.depth.len(), 64);
        assert!(o.depth.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(o.to_vec(9).len(), 64 + 4 + 9);
    }

    #[test]
    fn human_behind_is_invisible() {
        let s = Scene::empty(10.0, 10.0).unwrap();
        let d = detect(&s, Pose::new(5.0, 5.0, 0.0), Point::new(3.0, 5.0), &BodyParams::default(), &SensorConfig::default());
        assert_eq!(d, Detection::NONE);
    }

    #[test]
    fn gps_examples() {
        let g = humanoid_gps(Pose::new(0.0, 0.0, 0.0), Point::new(1.0, 1.0));
        assert!((g.radius - 2f64.sqrt()).abs() < 1e-12);
        assert!((g.azimuth - PI / 4.0).abs() < 1e-12);
        let g = humanoid_gps(Pose::new(0.0, 0.0, PI / 2.0), Point::new(0.0, 2.0));
        assert!((g.radius - 2.0).abs() < 1e-12);
        assert!(g.azimuth.abs() < 1e-12);
        let g = humanoid_gps(Pose::new(3.0, 4.0, 0.0), Point::new(3.0, 4.0));
        assert_eq!((g.radius, g.azimuth), (0.0, 0.0));
    }

    #[test]
    fn privileged_layouts() {
        let s = Scene::empty(1.0, 1.0).unwrap();
        let mut buf = TrajectoryBuffer::new(20);
        buf.push(Point::new(0.5, 0.5));
        let zero = HumanoidGps {
            radius: 0.0,
            azimuth: 0.0,
        };
        let t = privileged_vector(PrivilegedMode::Traj, &buf, &zero, &s).unwrap();
        assert_eq!(t, vec![0.5; 40]);
        let h = privileged_vector(PrivilegedMode::Hgps, &buf, &zero, &s).unwrap();
        assert_eq!(h, vec![0.0, 0.0]);
        let gps = humanoid_gps(Pose::new(0.0, 0.0, 0.0), Point::new(0.0, 1.0));
        let both = privileged_vector(PrivilegedMode::Both, &buf, &gps, &s).unwrap();
        assert_eq!(both.len(), 42);
        assert_eq!(&both[..40], t.as_slice());
        assert!((both[41] - 0.5).abs() < 1e-12);
        assert!(privileged_vector(PrivilegedMode::None, &buf, &zero, &s).is_err());
        assert!("bogus".parse::<PrivilegedMode>().is_err());
    }

    #[test]
    fn wall_blocks_detection() {
        let s = Scene::new(10.0, 10.0, vec![Segment::new(Point::new(7.0, 4.0), Point::new(7.0, 6.0))], 0.25).unwrap();
        let d = detect(&s, Pose::new(5.0, 5.0, 0.0), Point::new(8.5, 5.0), &BodyParams::default(), &SensorConfig::default());
        assert!(!d.visible);
    }
}
