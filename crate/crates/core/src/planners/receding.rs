use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{AgentAction, Policy};
use crate::vrnn::{sample_rollout, RolloutRequest, VrnnModel};
use crate::world::{check_success, MapConfig, ObservationFrame, Pose2, TableGeometry, TableState};

use super::{cost, p_controller, CostParams, Plan, Waypoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub n_samples: usize,
    /// Rollout length in ticks.
    pub horizon: usize,
    pub replan_interval: u64,
    /// Ticks between consecutive plan waypoints.
    pub waypoint_stride: usize,
    pub gain: f64,
    pub temperature: f64,
    pub cost: CostParams,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            n_samples: 32,
            horizon: 90,
            replan_interval: 15,
            waypoint_stride: 30,
            gain: 1.0,
            temperature: 1.0,
            cost: CostParams::default(),
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        self.cost.validate()?;
        if self.n_samples == 0
            || self.horizon == 0
            || self.replan_interval == 0
            || self.waypoint_stride == 0
        {
            return Err(Error::Invalid(format!(
                "planner sizes must be positive: {self:?}"
            )));
        }
        if !(self.gain >= 0.0) || !(self.temperature >= 0.0) {
            return Err(Error::Invalid(
                "planner gain and temperature must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Index of the lowest cost; ties go to the lowest index.
pub fn select_rollout(costs: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in costs.iter().enumerate() {
        if best.is_none_or(|b| *c < costs[b]) {
            best = Some(i);
        }
    }
    best
}

/// Index where a rollout stops counting: the first pose inside the goal,
/// else the pose closest to the goal center (latest on ties).
pub fn rollout_end(poses: &[Pose2], map: &MapConfig) -> usize {
    if let Some(g) = poses
        .iter()
        .position(|q| check_success(&TableState::at_rest(*q), &map.goal))
    {
        return g;
    }
    let mut best = 0;
    for (i, q) in poses.iter().enumerate() {
        if (q.position() - map.goal.center).norm()
            <= (poses[best].position() - map.goal.center).norm()
        {
            best = i;
        }
    }
    best
}

/// Rolls out the model from `state`, scores every sample and turns the
/// cheapest into a plan born at `tick`. Returns the plan and all costs.
#[allow(clippy::too_many_arguments)]
pub fn make_plan(
    model: &VrnnModel,
    history: &[ObservationFrame],
    state: &TableState,
    map: &MapConfig,
    table: &TableGeometry,
    cfg: &PlannerConfig,
    tick: u64,
    seed: u64,
) -> Result<(Plan, Vec<f64>)> {
    cfg.validate()?;
    let req = RolloutRequest {
        history,
        start: state.pose,
        map,
        n_samples: cfg.n_samples,
        horizon: cfg.horizon,
        seed: seed ^ tick.wrapping_mul(0x9e37_79b9_7f4a_7c15),
        temperature: cfg.temperature,
    };
    let batch = sample_rollout(model, &req)?;
    // A rollout ends at its first goal-reaching pose, or else at its closest
    // approach to the goal: it is scored up to there and the plan holds
    // that pose.
    let ends: Vec<usize> = batch.poses.iter().map(|p| rollout_end(p, map)).collect();
    let costs: Vec<f64> = batch
        .poses
        .iter()
        .zip(&ends)
        .map(|(p, &e)| cost(&p[..=e], map, table, &cfg.cost))
        .collect();
    let best = select_rollout(&costs).expect("at least one sample");
    let mut poses = batch.poses[best].clone();
    let hold = poses[ends[best]];
    poses[ends[best]..].fill(hold);
    let mut waypoints: Vec<Waypoint> = (cfg.waypoint_stride..=cfg.horizon)
        .step_by(cfg.waypoint_stride)
        .map(|k| Waypoint {
            tick: tick + k as u64,
            pose: poses[k],
        })
        .collect();
    if waypoints
        .last()
        .is_none_or(|w| w.tick != tick + cfg.horizon as u64)
    {
        waypoints.push(Waypoint {
            tick: tick + cfg.horizon as u64,
            pose: poses[cfg.horizon],
        });
    }
    Ok((Plan::new(waypoints)?, costs))
}

/// Rolling observation history plus the plan being tracked.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlannerState {
    pub history: VecDeque<ObservationFrame>,
    pub plan: Option<Plan>,
    pub plan_birth: Option<u64>,
}

impl PlannerState {
    /// Appends a frame, keeping at most `capacity`.
    pub fn observe(&mut self, frame: ObservationFrame, capacity: usize) {
        self.history.push_back(frame);
        while self.history.len() > capacity {
            self.history.pop_front();
        }
    }

    pub fn needs_replan(&self, tick: u64, interval: u64) -> bool {
        self.plan_birth.is_none_or(|b| tick >= b + interval)
    }
}

/// One control step. Zero action until the history is full; afterwards a
/// fresh plan every `replan_interval` ticks, tracking its waypoints between
/// replans.
#[allow(clippy::too_many_arguments)]
pub fn receding_horizon_step(
    ps: &PlannerState,
    model: &VrnnModel,
    map: &MapConfig,
    table: &TableGeometry,
    cfg: &PlannerConfig,
    state: &TableState,
    tick: u64,
    seed: u64,
) -> Result<(AgentAction, PlannerState)> {
    let mut next = ps.clone();
    if ps.history.len() < model.hyper.history_len {
        return Ok((AgentAction::ZERO, next));
    }
    if ps.needs_replan(tick, cfg.replan_interval) {
        let history: Vec<ObservationFrame> = ps.history.iter().copied().collect();
        let (plan, _) = make_plan(model, &history, state, map, table, cfg, tick, seed)?;
        next.plan = Some(plan);
        next.plan_birth = Some(tick);
    }
    let plan = next.plan.as_ref().expect("plan set above");
    Ok((p_controller(state, &plan.target_at(tick), cfg.gain), next))
}

/// Robot end driven by [`receding_horizon_step`]. Planning errors leave the
/// robot still for that tick and are counted.
#[derive(Debug, Clone)]
pub struct VrnnPlanner {
    model: Arc<VrnnModel>,
    map: MapConfig,
    table: TableGeometry,
    cfg: PlannerConfig,
    seed: u64,
    state: PlannerState,
    pub errors: usize,
    pub last_error: Option<String>,
}

impl VrnnPlanner {
    pub fn new(
        model: Arc<VrnnModel>,
        map: &MapConfig,
        table: TableGeometry,
        cfg: PlannerConfig,
        seed: u64,
    ) -> Self {
        VrnnPlanner {
            model,
            map: map.clone(),
            table,
            cfg,
            seed,
            state: PlannerState::default(),
            errors: 0,
            last_error: None,
        }
    }

    pub fn planner_state(&self) -> &PlannerState {
        &self.state
    }
}

impl Policy for VrnnPlanner {
    fn act(&mut self, tick: u64, state: &TableState, history: &[ObservationFrame]) -> AgentAction {
        if let Some(f) = history.last() {
            self.state.observe(*f, self.model.hyper.history_len);
        }
        match receding_horizon_step(
            &self.state,
            &self.model,
            &self.map,
            &self.table,
            &self.cfg,
            state,
            tick,
            self.seed,
        ) {
            Ok((a, next)) => {
                self.state = next;
                a
            }
            Err(e) => {
                self.errors += 1;
                self.last_error = Some(e.to_string());
                AgentAction::ZERO
            }
        }
    }
}
