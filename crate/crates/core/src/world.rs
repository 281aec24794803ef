//! Geometry of the carrying task: table poses, obstacle maps, goal regions,
//! ego-frame observation vectors, and the collision/success predicates.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planar vector in meters (or meters/second, depending on context).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3-D cross product.
    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn rotate(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from(v: [f64; 2]) -> Self {
        Vec2::new(v[0], v[1])
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta % (2.0 * PI);
    if t <= -PI {
        t += 2.0 * PI;
    } else if t > PI {
        t -= 2.0 * PI;
    }
    t
}

/// World-frame pose of the table center.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    /// Unit vector along the table's long axis, pointing from the human end
    /// to the robot end.
    pub fn axis(&self) -> Vec2 {
        Vec2::new(self.theta.cos(), self.theta.sin())
    }
}

/// Joint state of the carried load.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TableState {
    pub pose: Pose2,
    pub lin_vel: Vec2,
    pub ang_vel: f64,
}

impl TableState {
    pub fn at_rest(pose: Pose2) -> Self {
        Self {
            pose,
            lin_vel: Vec2::ZERO,
            ang_vel: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.pose.x.is_finite()
            && self.pose.y.is_finite()
            && self.pose.theta.is_finite()
            && self.lin_vel.is_finite()
            && self.ang_vel.is_finite()
    }
}

/// Axis-aligned square obstacle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: Vec2,
    pub half_extent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalRegion {
    pub center: Vec2,
    pub radius: f64,
}

/// Axis-aligned rectangle bounding the map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Vec2,
    pub max: Vec2,
}

impl Bounds {
    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            min: Vec2::ZERO,
            max: Vec2::new(12.0, 8.0),
        }
    }
}

/// Oriented rectangle dimensions of the carried table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableGeometry {
    pub length: f64,
    pub width: f64,
}

impl Default for TableGeometry {
    fn default() -> Self {
        TableGeometry {
            length: 1.0,
            width: 0.5,
        }
    }
}

impl TableGeometry {
    /// Corners in world frame, counter-clockwise starting at the robot end.
    pub fn corners(&self, pose: &Pose2) -> [Vec2; 4] {
        let u = pose.axis() * (self.length / 2.0);
        let n = Vec2::new(-pose.theta.sin(), pose.theta.cos()) * (self.width / 2.0);
        let c = pose.position();
        [c + u - n, c + u + n, c - u + n, c - u - n]
    }
}

/// One map of the carrying task. Field names are part of the dataset format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapConfig {
    pub id: String,
    pub initial_pose: Pose2,
    pub obstacles: Vec<Obstacle>,
    pub goal: GoalRegion,
    pub bounds: Bounds,
}

impl MapConfig {
    /// Checks the map invariants for the given table geometry.
    pub fn validate(&self, table: &TableGeometry) -> Result<()> {
        if self.goal.radius <= 0.0 {
            return Err(Error::Invalid(format!(
                "map {}: goal radius must be positive",
                self.id
            )));
        }
        if !self.bounds.contains(self.goal.center) {
            return Err(Error::Invalid(format!(
                "map {}: goal outside bounds",
                self.id
            )));
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            if o.half_extent <= 0.0 {
                return Err(Error::Invalid(format!(
                    "map {}: obstacle {i} has non-positive extent",
                    self.id
                )));
            }
            let lo = o.center - Vec2::new(o.half_extent, o.half_extent);
            let hi = o.center + Vec2::new(o.half_extent, o.half_extent);
            if !self.bounds.contains(lo) || !self.bounds.contains(hi) {
                return Err(Error::Invalid(format!(
                    "map {}: obstacle {i} outside bounds",
                    self.id
                )));
            }
        }
        if check_collision(&TableState::at_rest(self.initial_pose), self, table) {
            return Err(Error::Invalid(format!(
                "map {}: initial pose in collision",
                self.id
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// The 8 model inputs for one tick.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ObservationFrame {
    pub dp: Vec2,
    pub dcos: f64,
    pub dsin: f64,
    pub d_goal_ego: Vec2,
    pub d_obs_ego: Vec2,
}

impl ObservationFrame {
    pub const DIM: usize = 8;

    pub fn to_array(&self) -> [f64; 8] {
        [
            self.dp.x,
            self.dp.y,
            self.dcos,
            self.dsin,
            self.d_goal_ego.x,
            self.d_goal_ego.y,
            self.d_obs_ego.x,
            self.d_obs_ego.y,
        ]
    }

    pub fn from_array(a: [f64; 8]) -> Self {
        ObservationFrame {
            dp: Vec2::new(a[0], a[1]),
            dcos: a[2],
            dsin: a[3],
            d_goal_ego: Vec2::new(a[4], a[5]),
            d_obs_ego: Vec2::new(a[6], a[7]),
        }
    }

    /// The motion part (dx, dy, dcos, dsin) predicted by the model.
    pub fn motion(&self) -> [f64; 4] {
        [self.dp.x, self.dp.y, self.dcos, self.dsin]
    }
}

/// Expresses a world-frame point in the table's ego frame.
pub fn world_to_ego(pose: &Pose2, point: Vec2) -> Vec2 {
    (point - pose.position()).rotate(-pose.theta)
}

pub fn ego_to_world(pose: &Pose2, v: Vec2) -> Vec2 {
    v.rotate(pose.theta) + pose.position()
}

/// Nearest obstacle by center distance and the world-frame heading to it.
/// Ties go to the lowest index.
pub fn nearest_obstacle(position: Vec2, obstacles: &[Obstacle]) -> Result<(usize, Vec2)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, o) in obstacles.iter().enumerate() {
        let d = (o.center - position).norm();
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    let (i, _) = best.ok_or(Error::NoObstacles)?;
    Ok((i, obstacles[i].center - position))
}

/// Ego-frame heading to the goal and to the nearest obstacle (zero when the
/// map has no obstacles).
pub fn ego_headings(pose: &Pose2, map: &MapConfig) -> (Vec2, Vec2) {
    let d_goal = world_to_ego(pose, map.goal.center);
    let d_obs = match nearest_obstacle(pose.position(), &map.obstacles) {
        Ok((i, _)) => world_to_ego(pose, map.obstacles[i].center),
        Err(_) => Vec2::ZERO,
    };
    (d_goal, d_obs)
}

pub fn build_observation(prev: &TableState, cur: &TableState, map: &MapConfig) -> ObservationFrame {
    let (d_goal_ego, d_obs_ego) = ego_headings(&cur.pose, map);
    ObservationFrame {
        dp: cur.pose.position() - prev.pose.position(),
        dcos: cur.pose.theta.cos() - prev.pose.theta.cos(),
        dsin: cur.pose.theta.sin() - prev.pose.theta.sin(),
        d_goal_ego,
        d_obs_ego,
    }
}

fn rect_hits_square(pose: &Pose2, table: &TableGeometry, obs: &Obstacle) -> bool {
    let u = pose.axis();
    let n = Vec2::new(-u.y, u.x);
    let a = table.length / 2.0;
    let b = table.width / 2.0;
    let h = obs.half_extent;
    let d = obs.center - pose.position();
    for axis in [Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0), u, n] {
        let r_table = a * u.dot(axis).abs() + b * n.dot(axis).abs();
        let r_obs = h * (axis.x.abs() + axis.y.abs());
        if d.dot(axis).abs() > r_table + r_obs {
            return false;
        }
    }
    true
}

/// True when the table rectangle touches any obstacle or leaves the map.
pub fn check_collision(state: &TableState, map: &MapConfig, table: &TableGeometry) -> bool {
    pose_collides(&state.pose, map, table)
}

pub fn pose_collides(pose: &Pose2, map: &MapConfig, table: &TableGeometry) -> bool {
    if table.corners(pose).iter().any(|c| !map.bounds.contains(*c)) {
        return true;
    }
    map.obstacles
        .iter()
        .any(|o| rect_hits_square(pose, table, o))
}

/// Center-in-disk goal test, boundary inclusive.
pub fn check_success(state: &TableState, goal: &GoalRegion) -> bool {
    (state.pose.position() - goal.center).norm() <= goal.radius
}
