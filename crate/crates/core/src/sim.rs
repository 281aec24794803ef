//! Fixed-rate rigid-body dynamics of the carried table, driven by two agents
//! pushing at opposite ends, plus episode execution and trajectory logs.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{
    build_observation, check_collision, check_success, wrap_angle, MapConfig, ObservationFrame,
    Pose2, TableGeometry, TableState, Vec2,
};

pub const TRAJECTORY_FORMAT_VERSION: u32 = 1;

/// Normalized joystick deflection, each axis in [-1, 1], world frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AgentAction {
    pub fx: f64,
    pub fy: f64,
}

impl AgentAction {
    pub const ZERO: AgentAction = AgentAction { fx: 0.0, fy: 0.0 };

    /// Builds an action, clipping both axes to [-1, 1].
    pub fn new(fx: f64, fy: f64) -> Self {
        AgentAction {
            fx: fx.clamp(-1.0, 1.0),
            fy: fy.clamp(-1.0, 1.0),
        }
    }

    pub fn as_vec(&self) -> Vec2 {
        Vec2::new(self.fx, self.fy)
    }

    pub fn is_finite(&self) -> bool {
        self.fx.is_finite() && self.fy.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub mass: f64,
    pub inertia: f64,
    pub lin_damping: f64,
    pub ang_damping: f64,
    /// Newtons per unit of joystick deflection.
    pub force_scale: f64,
    pub table_length: f64,
    pub table_width: f64,
    pub dt: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        let mass = 2.0;
        let (length, width) = (1.0, 0.5);
        SimParams {
            mass,
            inertia: mass * (length * length + width * width) / 12.0,
            lin_damping: 4.0,
            ang_damping: 1.5,
            force_scale: 8.0,
            table_length: length,
            table_width: width,
            dt: 1.0 / 30.0,
        }
    }
}

impl SimParams {
    pub fn geometry(&self) -> TableGeometry {
        TableGeometry {
            length: self.table_length,
            width: self.table_width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.mass,
            self.inertia,
            self.lin_damping,
            self.ang_damping,
            self.force_scale,
            self.table_length,
            self.table_width,
            self.dt,
        ];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::Invalid(format!(
                "simulator parameters must be positive: {self:?}"
            )))
        }
    }
}

/// Net force and z-torque on the table.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Wrench {
    pub force: Vec2,
    pub torque: f64,
}

/// Robot force acts at +L/2 along the table axis, human force at -L/2.
pub fn compose_wrench(
    state: &TableState,
    a_robot: &AgentAction,
    a_human: &AgentAction,
    params: &SimParams,
) -> Wrench {
    let f_robot = a_robot.as_vec() * params.force_scale;
    let f_human = a_human.as_vec() * params.force_scale;
    let arm = state.pose.axis() * (params.table_length / 2.0);
    Wrench {
        force: f_robot + f_human,
        torque: arm.cross(f_robot) + (-arm).cross(f_human),
    }
}

/// One semi-implicit Euler step with linear viscous damping.
pub fn step(
    state: &TableState,
    a_robot: &AgentAction,
    a_human: &AgentAction,
    params: &SimParams,
) -> TableState {
    let w = compose_wrench(state, a_robot, a_human, params);
    let dt = params.dt;
    let lin_vel =
        state.lin_vel + (w.force - state.lin_vel * params.lin_damping) * (dt / params.mass);
    let ang_vel =
        state.ang_vel + dt * (w.torque - params.ang_damping * state.ang_vel) / params.inertia;
    let pos = state.pose.position() + lin_vel * dt;
    TableState {
        pose: Pose2 {
            x: pos.x,
            y: pos.y,
            theta: wrap_angle(state.pose.theta + dt * ang_vel),
        },
        lin_vel,
        ang_vel,
    }
}

/// Anything that can drive one end of the table.
pub trait Policy {
    fn act(&mut self, tick: u64, state: &TableState, history: &[ObservationFrame]) -> AgentAction;
}

impl<F> Policy for F
where
    F: FnMut(u64, &TableState, &[ObservationFrame]) -> AgentAction,
{
    fn act(&mut self, tick: u64, state: &TableState, history: &[ObservationFrame]) -> AgentAction {
        self(tick, state, history)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Success,
    Collision,
    Timeout,
}

/// `action_*` is the action applied to `state` at this tick (zero on the
/// terminal record); `obs` is built from the previous and current state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub tick: u64,
    pub state: TableState,
    pub action_robot: AgentAction,
    pub action_human: AgentAction,
    pub obs: ObservationFrame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub map_id: String,
    pub params: SimParams,
    pub steps: Vec<StepRecord>,
    pub outcome: Outcome,
}

#[derive(Serialize, Deserialize)]
struct TrajectoryHeader {
    format_version: u32,
    map_id: String,
    params: SimParams,
    outcome: Outcome,
}

impl Trajectory {
    pub fn poses(&self) -> Vec<Pose2> {
        self.steps.iter().map(|s| s.state.pose).collect()
    }

    pub fn observations(&self) -> Vec<ObservationFrame> {
        self.steps.iter().map(|s| s.obs).collect()
    }

    /// Elapsed simulated seconds at the final record.
    pub fn duration(&self) -> f64 {
        self.steps
            .last()
            .map_or(0.0, |s| s.tick as f64 * self.params.dt)
    }

    pub fn check_invariants(&self) -> Result<()> {
        if self.steps.is_empty() {
            return Err(Error::Invalid("trajectory has no steps".into()));
        }
        for w in self.steps.windows(2) {
            if w[1].tick != w[0].tick + 1 {
                return Err(Error::Invalid(format!(
                    "non-consecutive ticks {} -> {}",
                    w[0].tick, w[1].tick
                )));
            }
        }
        Ok(())
    }

    /// Header line followed by one record per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header = TrajectoryHeader {
            format_version: TRAJECTORY_FORMAT_VERSION,
            map_id: self.map_id.clone(),
            params: self.params,
            outcome: self.outcome,
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for s in &self.steps {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("serde_json emits utf-8")
    }

    /// Parses the JSON-lines format; `path` is used for diagnostics only.
    pub fn read_jsonl<R: BufRead>(r: R, path: &Path) -> Result<Self> {
        let fmt_err = |line: usize, msg: String| Error::Format {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = r.lines().enumerate();
        let header: TrajectoryHeader = match lines.next() {
            Some((_, Ok(l))) => {
                serde_json::from_str(&l).map_err(|e| fmt_err(1, format!("bad header: {e}")))?
            }
            Some((_, Err(e))) => return Err(Error::io(path, e)),
            None => return Err(fmt_err(1, "empty file".into())),
        };
        if header.format_version != TRAJECTORY_FORMAT_VERSION {
            return Err(Error::Version {
                path: path.to_path_buf(),
                expected: TRAJECTORY_FORMAT_VERSION,
                found: header.format_version,
            });
        }
        let mut steps = Vec::new();
        for (i, line) in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: StepRecord = serde_json::from_str(&line)
                .map_err(|e| fmt_err(i + 1, format!("bad step record: {e}")))?;
            if let Some(prev) = steps.last() {
                let prev: &StepRecord = prev;
                if rec.tick != prev.tick + 1 {
                    return Err(fmt_err(
                        i + 1,
                        format!("tick {} does not follow {}", rec.tick, prev.tick),
                    ));
                }
            }
            steps.push(rec);
        }
        let traj = Trajectory {
            map_id: header.map_id,
            params: header.params,
            steps,
            outcome: header.outcome,
        };
        traj.check_invariants()
            .map_err(|e| fmt_err(1, e.to_string()))?;
        Ok(traj)
    }
}

/// Runs one episode until success, collision or `max_ticks`.
pub fn run_episode(
    policy_robot: &mut dyn Policy,
    policy_human: &mut dyn Policy,
    map: &MapConfig,
    params: &SimParams,
    max_ticks: u64,
) -> Result<Trajectory> {
    let geom = params.geometry();
    let mut state = TableState::at_rest(map.initial_pose);
    let mut prev = state;
    let mut history: Vec<ObservationFrame> = Vec::new();
    let mut steps = Vec::new();
    let mut tick = 0u64;
    let outcome = loop {
        let obs = build_observation(&prev, &state, map);
        history.push(obs);
        let terminal = if check_collision(&state, map, &geom) {
            Some(Outcome::Collision)
        } else if check_success(&state, &map.goal) {
            Some(Outcome::Success)
        } else if tick >= max_ticks {
            Some(Outcome::Timeout)
        } else {
            None
        };
        if let Some(outcome) = terminal {
            steps.push(StepRecord {
                tick,
                state,
                action_robot: AgentAction::ZERO,
                action_human: AgentAction::ZERO,
                obs,
            });
            break outcome;
        }
        let ar = policy_robot.act(tick, &state, &history);
        let ah = policy_human.act(tick, &state, &history);
        if !ar.is_finite() || !ah.is_finite() {
            return Err(Error::NonFinite(format!(
                "policy action at tick {tick} on map {}: robot {ar:?}, human {ah:?}",
                map.id
            )));
        }
        let (ar, ah) = (
            AgentAction::new(ar.fx, ar.fy),
            AgentAction::new(ah.fx, ah.fy),
        );
        steps.push(StepRecord {
            tick,
            state,
            action_robot: ar,
            action_human: ah,
            obs,
        });
        prev = state;
        state = step(&state, &ar, &ah, params);
        tick += 1;
    };
    Ok(Trajectory {
        map_id: map.id.clone(),
        params: *params,
        steps,
        outcome,
    })
}

/// Re-applies the logged actions from the logged initial state.
pub fn replay(traj: &Trajectory, map: &MapConfig) -> Vec<TableState> {
    let mut out = Vec::with_capacity(traj.steps.len());
    let mut state = traj
        .steps
        .first()
        .map_or(TableState::at_rest(map.initial_pose), |s| s.state);
    for rec in &traj.steps {
        out.push(state);
        state = step(&state, &rec.action_robot, &rec.action_human, &traj.params);
    }
    out
}
