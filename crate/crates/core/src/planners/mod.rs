//! Plans, tracking control, the rollout cost, the RRT baselines and the
//! receding-horizon planner built on sampled model rollouts.

mod receding;
mod rrt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::AgentAction;
use crate::world::{pose_collides, wrap_angle, MapConfig, Pose2, TableGeometry, TableState};

pub use receding::{
    make_plan, receding_horizon_step, rollout_end, select_rollout, PlannerConfig, PlannerState,
    VrnnPlanner,
};
pub use rrt::{dec_rrt_policy, rrt_plan, DecRrtPlanner, RrtOutcome, RrtParams, RRT_NOMINAL_SPEED};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub tick: u64,
    pub pose: Pose2,
}

/// Timestamped waypoints with strictly increasing ticks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Waypoint>", into = "Vec<Waypoint>")]
pub struct Plan {
    waypoints: Vec<Waypoint>,
}

impl Plan {
    pub fn new(waypoints: Vec<Waypoint>) -> Result<Self> {
        if waypoints.is_empty() {
            return Err(Error::Invalid("plan has no waypoints".into()));
        }
        if let Some(w) = waypoints.windows(2).find(|w| w[1].tick <= w[0].tick) {
            return Err(Error::Invalid(format!(
                "plan ticks not increasing: {} then {}",
                w[0].tick, w[1].tick
            )));
        }
        Ok(Plan { waypoints })
    }

    pub fn waypoints(&self) -> &[Waypoint] {
        &self.waypoints
    }

    /// First waypoint stamped at or after `tick`; the final waypoint once
    /// the plan has run out.
    pub fn target_at(&self, tick: u64) -> Pose2 {
        self.waypoints
            .iter()
            .find(|w| w.tick >= tick)
            .unwrap_or_else(|| self.waypoints.last().expect("non-empty"))
            .pose
    }

    /// One pose per tick from the first to the last waypoint, linearly
    /// interpolated (orientation along the shorter arc).
    pub fn per_tick_poses(&self) -> Vec<Pose2> {
        let mut out = vec![self.waypoints[0].pose];
        for w in self.waypoints.windows(2) {
            let (a, b) = (w[0].pose, w[1].pose);
            let n = w[1].tick - w[0].tick;
            let dth = wrap_angle(b.theta - a.theta);
            for k in 1..=n {
                let s = k as f64 / n as f64;
                out.push(Pose2::new(
                    a.x + s * (b.x - a.x),
                    a.y + s * (b.y - a.y),
                    wrap_angle(a.theta + s * dth),
                ));
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

impl TryFrom<Vec<Waypoint>> for Plan {
    type Error = Error;
    fn try_from(w: Vec<Waypoint>) -> Result<Self> {
        Plan::new(w)
    }
}

impl From<Plan> for Vec<Waypoint> {
    fn from(p: Plan) -> Self {
        p.waypoints
    }
}

/// `gain * (target - position)`, clipped to the joystick range.
pub fn p_controller(state: &TableState, target: &Pose2, gain: f64) -> AgentAction {
    let e = target.position() - state.pose.position();
    AgentAction::new((gain * e.x).clamp(-1.0, 1.0), (gain * e.y).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub w_goal: f64,
    /// Added once if any pose of the rollout collides.
    pub w_collision: f64,
    pub w_progress: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            w_goal: 1.0,
            w_collision: 100.0,
            w_progress: 0.5,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        if [self.w_goal, self.w_collision, self.w_progress]
            .iter()
            .all(|w| w.is_finite() && *w >= 0.0)
        {
            Ok(())
        } else {
            Err(Error::Invalid(format!(
                "cost weights must be non-negative: {self:?}"
            )))
        }
    }
}

/// Terminal distance to the goal, a collision penalty and a reward for
/// progress toward the goal. Lower is better; an empty rollout costs 0.
pub fn cost(rollout: &[Pose2], map: &MapConfig, table: &TableGeometry, cp: &CostParams) -> f64 {
    let (Some(first), Some(last)) = (rollout.first(), rollout.last()) else {
        return 0.0;
    };
    let goal = map.goal.center;
    let d_end = (last.position() - goal).norm();
    let d_start = (first.position() - goal).norm();
    let hit = rollout.iter().any(|p| pose_collides(p, map, table));
    cp.w_goal * d_end + if hit { cp.w_collision } else { 0.0 } - cp.w_progress * (d_start - d_end)
}

#[cfg(test)]
mod tests;
