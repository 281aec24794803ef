use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{AgentAction, Policy};
use crate::world::{
    check_success, pose_collides, wrap_angle, MapConfig, ObservationFrame, Pose2, TableGeometry,
    TableState,
};

use super::{p_controller, Plan, Waypoint};

/// Speed used to timestamp RRT waypoints, m/s.
pub const RRT_NOMINAL_SPEED: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RrtParams {
    /// Extension length under the weighted pose metric.
    pub step_size: f64,
    pub goal_bias: f64,
    pub max_iters: usize,
    /// Metres per radian in the pose metric.
    pub angular_weight: f64,
    pub seed: u64,
}

impl Default for RrtParams {
    fn default() -> Self {
        RrtParams {
            step_size: 0.3,
            goal_bias: 0.1,
            max_iters: 20_000,
            angular_weight: 0.3,
            seed: 0,
        }
    }
}

impl RrtParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0)
            || !(0.0..=1.0).contains(&self.goal_bias)
            || !(self.angular_weight >= 0.0)
        {
            return Err(Error::Invalid(format!("invalid RRT parameters: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RrtOutcome {
    Found {
        plan: Plan,
        iterations: usize,
    },
    /// No node reached the goal within `max_iters`.
    Exhausted {
        iterations: usize,
    },
}

impl RrtOutcome {
    pub fn plan(&self) -> Option<&Plan> {
        match self {
            RrtOutcome::Found { plan, .. } => Some(plan),
            RrtOutcome::Exhausted { .. } => None,
        }
    }
}

fn metric(a: &Pose2, b: &Pose2, w: f64) -> f64 {
    (a.position() - b.position()).norm() + w * wrap_angle(b.theta - a.theta).abs()
}

fn interpolate(a: &Pose2, b: &Pose2, s: f64) -> Pose2 {
    let d = wrap_angle(b.theta - a.theta);
    Pose2::new(
        a.x + s * (b.x - a.x),
        a.y + s * (b.y - a.y),
        a.theta + s * d,
    )
}

/// Largest distance any table point moves between edge collision checks.
const EDGE_RESOLUTION: f64 = 0.01;

fn edge_free(a: &Pose2, b: &Pose2, map: &MapConfig, table: &TableGeometry) -> bool {
    let reach = 0.5 * table.length.hypot(table.width);
    let swept = (b.position() - a.position()).norm() + reach * wrap_angle(b.theta - a.theta).abs();
    let n = (swept / EDGE_RESOLUTION).ceil().max(1.0) as usize;
    (1..=n).all(|i| !pose_collides(&interpolate(a, b, i as f64 / n as f64), map, table))
}

/// Centralized RRT over table poses. Waypoints are the tree path from the
/// start, timed at [`RRT_NOMINAL_SPEED`] starting from `start_tick`.
pub fn rrt_plan(
    start: Pose2,
    map: &MapConfig,
    table: &TableGeometry,
    params: &RrtParams,
    start_tick: u64,
    dt: f64,
) -> Result<RrtOutcome> {
    params.validate()?;
    if pose_collides(&start, map, table) {
        return Err(Error::Invalid(format!(
            "RRT start pose {start:?} collides on map {}",
            map.id
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let (lo, hi) = (map.bounds.min, map.bounds.max);
    let mut nodes = vec![start];
    let mut parent = vec![usize::MAX];
    let at_goal = |p: &Pose2| check_success(&TableState::at_rest(*p), &map.goal);

    let mut found = if at_goal(&start) { Some(0) } else { None };
    let mut iterations = 0;
    while found.is_none() && iterations < params.max_iters {
        iterations += 1;
        let sample = if rng.random_bool(params.goal_bias) {
            Pose2::new(
                map.goal.center.x,
                map.goal.center.y,
                rng.random_range(-PI..PI),
            )
        } else {
            Pose2::new(
                rng.random_range(lo.x..hi.x),
                rng.random_range(lo.y..hi.y),
                rng.random_range(-PI..PI),
            )
        };
        let (near, d) = nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (i, metric(n, &sample, params.angular_weight)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("tree has a root");
        if d < 1e-12 {
            continue;
        }
        let s = (params.step_size / d).min(1.0);
        let new = interpolate(&nodes[near], &sample, s);
        if !edge_free(&nodes[near], &new, map, table) {
            continue;
        }
        nodes.push(new);
        parent.push(near);
        if at_goal(&new) {
            found = Some(nodes.len() - 1);
        }
    }
    let Some(end) = found else {
        return Ok(RrtOutcome::Exhausted { iterations });
    };

    let mut path = vec![end];
    while parent[*path.last().expect("non-empty")] != usize::MAX {
        path.push(parent[*path.last().expect("non-empty")]);
    }
    path.reverse();
    let mut waypoints = Vec::with_capacity(path.len());
    let mut travelled = 0.0;
    let mut last_tick = start_tick;
    for (k, &i) in path.iter().enumerate() {
        if k > 0 {
            travelled += (nodes[i].position() - nodes[path[k - 1]].position()).norm();
        }
        let tick = if k == 0 {
            start_tick
        } else {
            (start_tick + (travelled / RRT_NOMINAL_SPEED / dt).round() as u64).max(last_tick + 1)
        };
        waypoints.push(Waypoint {
            tick,
            pose: nodes[i],
        });
        last_tick = tick;
    }
    Ok(RrtOutcome::Found {
        plan: Plan::new(waypoints)?,
        iterations,
    })
}

/// Proportional pursuit of the plan's current waypoint.
pub fn dec_rrt_policy(plan: &Plan, state: &TableState, tick: u64, gain: f64) -> AgentAction {
    p_controller(state, &plan.target_at(tick), gain)
}

/// Robot end driven by one RRT plan computed on the first tick and never
/// revised. If planning fails the robot holds still.
#[derive(Debug, Clone)]
pub struct DecRrtPlanner {
    map: MapConfig,
    table: TableGeometry,
    params: RrtParams,
    dt: f64,
    gain: f64,
    plan: Option<Option<Plan>>,
}

impl DecRrtPlanner {
    pub fn new(
        map: &MapConfig,
        table: TableGeometry,
        params: RrtParams,
        dt: f64,
        gain: f64,
    ) -> Self {
        DecRrtPlanner {
            map: map.clone(),
            table,
            params,
            dt,
            gain,
            plan: None,
        }
    }

    pub fn plan(&self) -> Option<&Plan> {
        self.plan.as_ref().and_then(|p| p.as_ref())
    }
}

impl Policy for DecRrtPlanner {
    fn act(&mut self, tick: u64, state: &TableState, _history: &[ObservationFrame]) -> AgentAction {
        if self.plan.is_none() {
            let outcome = rrt_plan(
                state.pose,
                &self.map,
                &self.table,
                &self.params,
                tick,
                self.dt,
            );
            self.plan = Some(outcome.ok().and_then(|o| o.plan().cloned()));
        }
        match self.plan() {
            Some(plan) => dec_rrt_policy(plan, state, tick, self.gain),
            None => AgentAction::ZERO,
        }
    }
}
