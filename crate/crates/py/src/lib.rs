//! Python bindings for the simulator, scripted demonstrators, planners,
//! model rollouts and metrics.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use cocarry::datasets::{find_map as core_find_map, generate_maps, unseen_maps};
use cocarry::error::Error;
use cocarry::metrics;
use cocarry::planners::{rrt_plan as core_rrt_plan, RrtParams};
use cocarry::scripted::{demo_pair, Mode, NavStyle};
use cocarry::sim::{self, AgentAction, Outcome};
use cocarry::vrnn::{sample_rollout, RolloutRequest};
use cocarry::world::{self, Vec2};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn action((fx, fy): (f64, f64)) -> AgentAction {
    AgentAction::new(fx, fy)
}

fn all_maps() -> Vec<world::MapConfig> {
    let mut maps = generate_maps();
    maps.extend(unseen_maps());
    maps
}

fn lookup(id: &str) -> PyResult<world::MapConfig> {
    core_find_map(&all_maps(), id).cloned().map_err(to_py)
}

#[pyclass(module = "cocarry", from_py_object)]
#[derive(Clone, Copy)]
pub struct Pose2 {
    #[pyo3(get, set)]
    pub x: f64,
    #[pyo3(get, set)]
    pub y: f64,
    #[pyo3(get, set)]
    pub theta: f64,
}

#[pymethods]
impl Pose2 {
    #[new]
    fn new(x: f64, y: f64, theta: f64) -> Self {
        world::Pose2::new(x, y, theta).into()
    }

    fn __repr__(&self) -> String {
        format!("Pose2(x={}, y={}, theta={})", self.x, self.y, self.theta)
    }
}

impl From<world::Pose2> for Pose2 {
    fn from(p: world::Pose2) -> Self {
        Pose2 {
            x: p.x,
            y: p.y,
            theta: p.theta,
        }
    }
}

impl From<Pose2> for world::Pose2 {
    fn from(p: Pose2) -> Self {
        world::Pose2 {
            x: p.x,
            y: p.y,
            theta: p.theta,
        }
    }
}

fn poses_out(poses: &[world::Pose2]) -> Vec<Pose2> {
    poses.iter().copied().map(Pose2::from).collect()
}

fn poses_in(poses: &[Pose2]) -> Vec<world::Pose2> {
    poses.iter().copied().map(world::Pose2::from).collect()
}

#[pyclass(module = "cocarry", from_py_object)]
#[derive(Clone, Copy)]
pub struct TableState {
    inner: world::TableState,
}

#[pymethods]
impl TableState {
    /// State at rest, or with the given velocities.
    #[new]
    #[pyo3(signature = (pose, lin_vel=(0.0, 0.0), ang_vel=0.0))]
    fn new(pose: Pose2, lin_vel: (f64, f64), ang_vel: f64) -> Self {
        TableState {
            inner: world::TableState {
                pose: pose.into(),
                lin_vel: Vec2::new(lin_vel.0, lin_vel.1),
                ang_vel,
            },
        }
    }

    #[getter]
    fn pose(&self) -> Pose2 {
        self.inner.pose.into()
    }

    #[getter]
    fn lin_vel(&self) -> (f64, f64) {
        (self.inner.lin_vel.x, self.inner.lin_vel.y)
    }

    #[getter]
    fn ang_vel(&self) -> f64 {
        self.inner.ang_vel
    }

    fn __repr__(&self) -> String {
        let s = &self.inner;
        format!(
            "TableState(pose={:?}, lin_vel={:?}, ang_vel={})",
            s.pose, s.lin_vel, s.ang_vel
        )
    }
}

#[pyclass(module = "cocarry", from_py_object)]
#[derive(Clone, Copy, Default)]
pub struct SimParams {
    inner: sim::SimParams,
}

#[pymethods]
impl SimParams {
    #[new]
    fn new() -> Self {
        Self::default()
    }

    #[getter]
    fn mass(&self) -> f64 {
        self.inner.mass
    }

    #[getter]
    fn force_scale(&self) -> f64 {
        self.inner.force_scale
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt
    }

    #[allow(clippy::wrong_self_convention)]
    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| to_py(e.into()))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: sim::SimParams = serde_json::from_str(text).map_err(|e| to_py(e.into()))?;
        inner.validate().map_err(to_py)?;
        Ok(SimParams { inner })
    }
}

#[pyclass(module = "cocarry", from_py_object)]
#[derive(Clone)]
pub struct MapConfig {
    inner: world::MapConfig,
}

#[pymethods]
impl MapConfig {
    #[getter]
    fn id(&self) -> String {
        self.inner.id.clone()
    }

    #[getter]
    fn initial_pose(&self) -> Pose2 {
        self.inner.initial_pose.into()
    }

    #[getter]
    fn goal(&self) -> ((f64, f64), f64) {
        let g = &self.inner.goal;
        ((g.center.x, g.center.y), g.radius)
    }

    /// `(center, half_extent)` per square obstacle.
    #[getter]
    fn obstacles(&self) -> Vec<((f64, f64), f64)> {
        self.inner
            .obstacles
            .iter()
            .map(|o| ((o.center.x, o.center.y), o.half_extent))
            .collect()
    }

    fn collides(&self, pose: Pose2) -> bool {
        world::pose_collides(&pose.into(), &self.inner, &world::TableGeometry::default())
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| to_py(e.into()))
    }
}

#[pyclass(module = "cocarry")]
pub struct Trajectory {
    inner: sim::Trajectory,
}

#[pymethods]
impl Trajectory {
    #[getter]
    fn map_id(&self) -> String {
        self.inner.map_id.clone()
    }

    /// "success", "collision" or "timeout".
    #[getter]
    fn outcome(&self) -> &'static str {
        match self.inner.outcome {
            Outcome::Success => "success",
            Outcome::Collision => "collision",
            Outcome::Timeout => "timeout",
        }
    }

    #[getter]
    fn duration(&self) -> f64 {
        self.inner.duration()
    }

    fn __len__(&self) -> usize {
        self.inner.steps.len()
    }

    fn poses(&self) -> Vec<Pose2> {
        poses_out(&self.inner.poses())
    }

    fn states(&self) -> Vec<TableState> {
        self.inner
            .steps
            .iter()
            .map(|s| TableState { inner: s.state })
            .collect()
    }

    /// `(robot, human)` force commands per tick.
    fn actions(&self) -> Vec<((f64, f64), (f64, f64))> {
        self.inner
            .steps
            .iter()
            .map(|s| {
                (
                    (s.action_robot.fx, s.action_robot.fy),
                    (s.action_human.fx, s.action_human.fy),
                )
            })
            .collect()
    }

    /// Interaction force per acting tick, N.
    fn interaction_forces(&self) -> Vec<f64> {
        metrics::interaction_series(&self.inner)
    }

    fn to_jsonl(&self) -> String {
        self.inner.to_jsonl()
    }

    #[staticmethod]
    fn from_jsonl(text: &str) -> PyResult<Self> {
        let inner = sim::Trajectory::read_jsonl(text.as_bytes(), &PathBuf::from("<string>"))
            .map_err(to_py)?;
        Ok(Trajectory { inner })
    }
}

#[pyclass(module = "cocarry")]
pub struct VrnnModel {
    inner: cocarry::vrnn::VrnnModel,
}

#[pymethods]
impl VrnnModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(VrnnModel {
            inner: cocarry::vrnn::VrnnModel::load(&path).map_err(to_py)?,
        })
    }

    #[getter]
    fn history_len(&self) -> usize {
        self.inner.hyper.history_len
    }

    /// Samples futures conditioned on the first `history_len` frames of
    /// `traj`. Each sample holds `horizon + 1` poses.
    #[pyo3(signature = (traj, n_samples, horizon, seed=0, temperature=1.0))]
    fn rollout(
        &self,
        traj: &Trajectory,
        n_samples: usize,
        horizon: usize,
        seed: u64,
        temperature: f64,
    ) -> PyResult<Vec<Vec<Pose2>>> {
        let h = self.inner.hyper.history_len;
        let t = &traj.inner;
        if t.steps.len() < h {
            return Err(PyValueError::new_err(format!(
                "trajectory has {} frames, need {h}",
                t.steps.len()
            )));
        }
        let map = lookup(&t.map_id)?;
        let history = t.observations();
        let req = RolloutRequest {
            history: &history[..h],
            start: t.steps[h - 1].state.pose,
            map: &map,
            n_samples,
            horizon,
            seed,
            temperature,
        };
        let batch = sample_rollout(&self.inner, &req).map_err(to_py)?;
        Ok(batch.poses.iter().map(|p| poses_out(p)).collect())
    }
}

/// The 63 training maps.
#[pyfunction]
fn maps() -> Vec<MapConfig> {
    generate_maps()
        .into_iter()
        .map(|inner| MapConfig { inner })
        .collect()
}

/// Held-out maps with obstacle layouts absent from the catalog.
#[pyfunction(name = "unseen_maps")]
fn py_unseen_maps() -> Vec<MapConfig> {
    unseen_maps()
        .into_iter()
        .map(|inner| MapConfig { inner })
        .collect()
}

#[pyfunction]
fn find_map(id: &str) -> PyResult<MapConfig> {
    Ok(MapConfig { inner: lookup(id)? })
}

/// One physics tick from the robot and human force commands.
#[pyfunction]
#[pyo3(signature = (state, robot, human, params=None))]
fn step(
    state: TableState,
    robot: (f64, f64),
    human: (f64, f64),
    params: Option<SimParams>,
) -> TableState {
    let p = params.unwrap_or_default().inner;
    TableState {
        inner: sim::step(&state.inner, &action(robot), &action(human), &p),
    }
}

/// A scripted demonstrator pair passing the obstacle on side `mode`
/// ("above" or "below").
#[pyfunction]
#[pyo3(signature = (map_id, mode, seed=0, max_ticks=900))]
fn scripted_episode(map_id: &str, mode: &str, seed: u64, max_ticks: u64) -> PyResult<Trajectory> {
    let mode = match mode {
        "above" => Mode::Above,
        "below" => Mode::Below,
        other => {
            return Err(PyValueError::new_err(format!(
                "mode must be 'above' or 'below', got {other:?}"
            )))
        }
    };
    let map = lookup(map_id)?;
    let params = sim::SimParams::default();
    let (mut r, mut h) = demo_pair(&map, &params, mode, NavStyle::default(), seed);
    let inner = sim::run_episode(&mut r, &mut h, &map, &params, max_ticks).map_err(to_py)?;
    Ok(Trajectory { inner })
}

/// States obtained by re-applying the logged actions.
#[pyfunction]
fn replay(traj: &Trajectory) -> PyResult<Vec<TableState>> {
    let map = lookup(&traj.inner.map_id)?;
    Ok(sim::replay(&traj.inner, &map)
        .into_iter()
        .map(|inner| TableState { inner })
        .collect())
}

/// Centralized RRT from the map's start pose, resampled to one pose per
/// tick. `None` when no plan is found.
#[pyfunction]
#[pyo3(signature = (map_id, seed=0, max_iters=20_000))]
fn rrt_plan(map_id: &str, seed: u64, max_iters: usize) -> PyResult<Option<Vec<Pose2>>> {
    let map = lookup(map_id)?;
    let params = sim::SimParams::default();
    let rrt = RrtParams {
        seed,
        max_iters,
        ..RrtParams::default()
    };
    let out = core_rrt_plan(
        map.initial_pose,
        &map,
        &params.geometry(),
        &rrt,
        0,
        params.dt,
    )
    .map_err(to_py)?;
    Ok(out.plan().map(|p| poses_out(&p.per_tick_poses())))
}

/// Frechet distance between Gaussians fitted to two sample sets.
#[pyfunction]
fn frechet_distance(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    metrics::frechet_distance(&a, &b).map_err(to_py)
}

/// Frechet distance between pose-delta distributions, total and per axis.
#[pyfunction]
fn fd_pose_batches(a: Vec<Vec<Pose2>>, b: Vec<Vec<Pose2>>) -> PyResult<(f64, [f64; 3])> {
    let a: Vec<_> = a.iter().map(|p| poses_in(p)).collect();
    let b: Vec<_> = b.iter().map(|p| poses_in(p)).collect();
    metrics::fd_pose_batches(&a, &b).map_err(to_py)
}

/// Per-axis variance across samples, averaged over time.
#[pyfunction]
fn temporal_variance(batch: Vec<Vec<Pose2>>) -> PyResult<[f64; 3]> {
    let batch: Vec<_> = batch.iter().map(|p| poses_in(p)).collect();
    metrics::temporal_variance(&batch).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (robot, human, theta, force_scale=8.0))]
fn interaction_force(robot: (f64, f64), human: (f64, f64), theta: f64, force_scale: f64) -> f64 {
    metrics::interaction_force(&action(robot), &action(human), theta, force_scale)
}

#[pymodule]
#[pyo3(name = "cocarry")]
fn cocarry_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Pose2>()?;
    m.add_class::<TableState>()?;
    m.add_class::<SimParams>()?;
    m.add_class::<MapConfig>()?;
    m.add_class::<Trajectory>()?;
    m.add_class::<VrnnModel>()?;
    m.add_function(wrap_pyfunction!(maps, m)?)?;
    m.add_function(wrap_pyfunction!(py_unseen_maps, m)?)?;
    m.add_function(wrap_pyfunction!(find_map, m)?)?;
    m.add_function(wrap_pyfunction!(step, m)?)?;
    m.add_function(wrap_pyfunction!(scripted_episode, m)?)?;
    m.add_function(wrap_pyfunction!(replay, m)?)?;
    m.add_function(wrap_pyfunction!(rrt_plan, m)?)?;
    m.add_function(wrap_pyfunction!(frechet_distance, m)?)?;
    m.add_function(wrap_pyfunction!(fd_pose_batches, m)?)?;
    m.add_function(wrap_pyfunction!(temporal_variance, m)?)?;
    m.add_function(wrap_pyfunction!(interaction_force, m)?)?;
    Ok(())
}
