//! Live trial orchestration: a fixed-rate tick loop that merges client
//! inputs, an asynchronous planner and the simulator, and records a
//! [`TrialLog`].

mod io;
pub mod protocol;
mod server;

use std::path::Path;
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::planners::{make_plan, p_controller, rrt_plan, Plan, PlannerConfig, RrtParams};
use crate::scripted::{demo_pair, Mode, NavStyle};
use crate::sim::{replay, step, AgentAction, Outcome, Policy, SimParams, StepRecord, Trajectory};
use crate::vrnn::VrnnModel;
use crate::world::{
    build_observation, check_collision, check_success, MapConfig, ObservationFrame, TableState,
};

pub use io::{loopback, ChannelIo, MultiIo, NullIo, ScriptedClient, SessionIo, WsIo};
pub use protocol::{
    AgentId, Envelope, InputPayload, Message, StatePayload, TrialEventKind, TrialEventPayload,
    TuringAnswer, TuringPromptPayload, TuringResponsePayload, PROTOCOL_VERSION, TURING_QUESTION,
};
pub use server::{accept_ws, serve, ServerHandle};

/// Fixed control and recording rate.
pub const TICK_RATE_HZ: u32 = 30;
/// 40 s at the tick rate.
pub const DEFAULT_MAX_TICKS: u64 = 1200;
pub const TRIAL_LOG_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionMode {
    HumanHuman,
    HumanVrnn,
    HumanDecrrt,
    Replay,
    Scripted,
}

impl SessionMode {
    /// Table ends whose input comes from connected clients.
    pub fn client_agents(self) -> &'static [AgentId] {
        match self {
            SessionMode::HumanHuman => &[AgentId::Robot, AgentId::Human],
            SessionMode::HumanVrnn | SessionMode::HumanDecrrt => &[AgentId::Human],
            SessionMode::Replay | SessionMode::Scripted => &[],
        }
    }

    /// Ground truth of what drove the end opposite the human.
    pub fn partner(self) -> Option<PartnerType> {
        match self {
            SessionMode::HumanHuman => Some(PartnerType::Human),
            SessionMode::HumanVrnn | SessionMode::HumanDecrrt | SessionMode::Scripted => {
                Some(PartnerType::Robot)
            }
            SessionMode::Replay => None,
        }
    }

    fn asks_turing(self) -> bool {
        !self.client_agents().is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartnerType {
    Human,
    Robot,
}

/// How the loop is paced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pacing {
    /// Wall-clock ticks; planning never blocks and late ticks are counted.
    Realtime,
    /// Each tick waits for every client input tagged with that tick and
    /// for any requested plan. Reproducible; used offline and in tests.
    Lockstep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub mode: SessionMode,
    pub map: MapConfig,
    pub params: SimParams,
    pub planner: PlannerConfig,
    /// Dec-RRT parameters; the session seed is mixed into the RRT seed.
    pub rrt: RrtParams,
    pub max_ticks: u64,
    pub pacing: Pacing,
    pub seed: u64,
    /// How long to wait for the Turing answer after the trial.
    pub turing_timeout_s: f64,
    /// Lockstep only: how long to wait for a client input before the
    /// client is treated as disconnected.
    pub input_timeout_s: f64,
}

impl SessionConfig {
    pub fn new(mode: SessionMode, map: MapConfig) -> Self {
        SessionConfig {
            mode,
            map,
            params: SimParams {
                dt: 1.0 / TICK_RATE_HZ as f64,
                ..SimParams::default()
            },
            planner: PlannerConfig::default(),
            rrt: RrtParams::default(),
            max_ticks: DEFAULT_MAX_TICKS,
            pacing: Pacing::Realtime,
            seed: 0,
            turing_timeout_s: 60.0,
            input_timeout_s: 10.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.planner.validate()?;
        self.rrt.validate()?;
        self.map.validate(&self.params.geometry())?;
        if (self.params.dt * TICK_RATE_HZ as f64 - 1.0).abs() > 1e-12 {
            return Err(Error::Invalid(format!(
                "session dt must be 1/{TICK_RATE_HZ} s, got {}",
                self.params.dt
            )));
        }
        if self.mode == SessionMode::Replay {
            return Err(Error::Invalid(
                "replay sessions run through replay_session".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct WallClock {
    pub started_unix_ms: u128,
    pub elapsed_s: f64,
    /// Longest time spent inside one tick.
    pub max_tick_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialLog {
    pub format_version: u32,
    pub mode: SessionMode,
    pub partner: Option<PartnerType>,
    pub trajectory: Trajectory,
    pub wall_clock: WallClock,
    /// Per acting tick: age in ticks of the plan that produced the robot
    /// action, if a plan was in use.
    pub plan_ages: Vec<Option<u64>>,
    pub plan_errors: usize,
    pub missed_deadlines: u64,
    pub rejected_inputs: u64,
    /// Set only after the trial has ended.
    pub turing_response: TuringAnswer,
    /// False when the trial was aborted.
    pub valid: bool,
    pub abort_reason: Option<String>,
}

impl TrialLog {
    pub fn check_invariants(&self) -> Result<()> {
        self.trajectory.check_invariants()?;
        if self.plan_ages.len() + 1 != self.trajectory.steps.len() {
            return Err(Error::Invalid("plan ages do not match acting ticks".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trial log serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let probe: serde_json::Value = serde_json::from_str(&text)?;
        let found = probe
            .get("format_version")
            .and_then(|v| v.as_u64())
            .unwrap_or(0) as u32;
        if found != TRIAL_LOG_FORMAT_VERSION {
            return Err(Error::Version {
                path: path.into(),
                expected: TRIAL_LOG_FORMAT_VERSION,
                found,
            });
        }
        let log: TrialLog = serde_json::from_value(probe)?;
        log.check_invariants()?;
        Ok(log)
    }
}

struct PlanRequest {
    tick: u64,
    state: TableState,
    history: Vec<ObservationFrame>,
}

type PlanFn = Box<dyn FnMut(&PlanRequest) -> Result<Option<Plan>> + Send>;

/// Planner thread fed through a request channel; completed plans come back
/// tagged with the tick they were requested at.
struct PlanWorker {
    requests: Option<Sender<PlanRequest>>,
    results: Receiver<(u64, Result<Option<Plan>>)>,
    handle: Option<JoinHandle<()>>,
    busy: bool,
    last_request: Option<u64>,
    /// `None` plans once.
    replan_interval: Option<u64>,
    min_history: usize,
}

impl PlanWorker {
    fn spawn(mut f: PlanFn, replan_interval: Option<u64>, min_history: usize) -> Self {
        let (req_tx, req_rx) = mpsc::channel::<PlanRequest>();
        let (res_tx, res_rx) = mpsc::channel();
        let handle = std::thread::spawn(move || {
            for req in req_rx {
                if res_tx.send((req.tick, f(&req))).is_err() {
                    break;
                }
            }
        });
        PlanWorker {
            requests: Some(req_tx),
            results: res_rx,
            handle: Some(handle),
            busy: false,
            last_request: None,
            replan_interval,
            min_history,
        }
    }

    fn due(&self, tick: u64, history_len: usize) -> bool {
        if self.busy || history_len < self.min_history {
            return false;
        }
        match (self.last_request, self.replan_interval) {
            (None, _) => true,
            (Some(_), None) => false,
            (Some(last), Some(i)) => tick >= last + i,
        }
    }

    fn request(&mut self, req: PlanRequest) {
        self.last_request = Some(req.tick);
        self.busy = true;
        if let Some(tx) = &self.requests {
            // A send failure surfaces as a dead worker on the next collect.
            let _ = tx.send(req);
        }
    }

    /// Completed results, newest last. Blocks for the pending one if asked.
    fn collect(&mut self, wait: bool) -> Vec<(u64, Result<Option<Plan>>)> {
        let mut out = Vec::new();
        if wait && self.busy {
            match self.results.recv() {
                Ok(r) => out.push(r),
                Err(_) => out.push((0, Err(Error::Invalid("planner thread stopped".into())))),
            }
            self.busy = false;
        }
        while let Ok(r) = self.results.try_recv() {
            out.push(r);
            self.busy = false;
        }
        out
    }
}

impl Drop for PlanWorker {
    fn drop(&mut self) {
        self.requests.take();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

enum RobotDriver {
    Client,
    Local(Box<dyn Policy>),
    Planned {
        worker: PlanWorker,
        plan: Option<(Plan, u64)>,
        gain: f64,
    },
}

fn planned_driver(cfg: &SessionConfig, model: Option<Arc<VrnnModel>>) -> Result<RobotDriver> {
    let map = cfg.map.clone();
    let table = cfg.params.geometry();
    match cfg.mode {
        SessionMode::HumanVrnn => {
            let model =
                model.ok_or_else(|| Error::Invalid("human-vrnn sessions need a model".into()))?;
            let h = model.hyper.history_len;
            let (pc, seed) = (cfg.planner, cfg.seed);
            let f: PlanFn = Box::new(move |r: &PlanRequest| {
                let hist = &r.history[r.history.len() - h..];
                make_plan(&model, hist, &r.state, &map, &table, &pc, r.tick, seed)
                    .map(|(p, _)| Some(p))
            });
            Ok(RobotDriver::Planned {
                worker: PlanWorker::spawn(f, Some(cfg.planner.replan_interval), h),
                plan: None,
                gain: cfg.planner.gain,
            })
        }
        SessionMode::HumanDecrrt => {
            let (rp, dt) = (
                RrtParams {
                    seed: cfg.rrt.seed ^ cfg.seed,
                    ..cfg.rrt
                },
                cfg.params.dt,
            );
            let f: PlanFn = Box::new(move |r: &PlanRequest| {
                rrt_plan(r.state.pose, &map, &table, &rp, r.tick, dt).map(|o| o.plan().cloned())
            });
            Ok(RobotDriver::Planned {
                worker: PlanWorker::spawn(f, None, 0),
                plan: None,
                gain: cfg.planner.gain,
            })
        }
        _ => unreachable!("only planner modes"),
    }
}

/// Scripted pair used by scripted sessions: both ends follow the same
/// seeded mode.
fn scripted_pair(cfg: &SessionConfig) -> (Box<dyn Policy>, Box<dyn Policy>) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mode = Mode::random(&mut rng);
    let (r, h) = demo_pair(&cfg.map, &cfg.params, mode, NavStyle::default(), cfg.seed);
    (Box::new(r), Box::new(h))
}

fn state_message(tick: u64, state: &TableState, map: &MapConfig, plan: Option<&Plan>) -> Envelope {
    Envelope::new(
        tick,
        Message::State(StatePayload {
            pose: state.pose,
            lin_vel: state.lin_vel,
            ang_vel: state.ang_vel,
            obstacles: map.obstacles.clone(),
            goal: map.goal,
            plan: plan.map(|p| p.waypoints().iter().map(|w| w.pose).collect()),
        }),
    )
}

/// Latest-wins input buffer with a zero default.
#[derive(Debug, Default, Clone, Copy)]
struct InputBuffer {
    robot: Option<AgentAction>,
    human: Option<AgentAction>,
}

impl InputBuffer {
    fn set(&mut self, agent: AgentId, a: AgentAction) {
        match agent {
            AgentId::Robot => self.robot = Some(a),
            AgentId::Human => self.human = Some(a),
        }
    }

    fn get(&self, agent: AgentId) -> AgentAction {
        match agent {
            AgentId::Robot => self.robot,
            AgentId::Human => self.human,
        }
        .unwrap_or(AgentAction::ZERO)
    }
}

struct TickLoop<'a> {
    cfg: &'a SessionConfig,
    io: &'a mut dyn SessionIo,
    inputs: InputBuffer,
    rejected: u64,
}

impl TickLoop<'_> {
    fn accept(&mut self, env: Envelope, tick: u64, seen: &mut Vec<AgentId>) {
        let Message::Input(inp) = env.msg else {
            return;
        };
        let allowed = self.cfg.mode.client_agents().contains(&inp.agent);
        if !allowed || !inp.fx.is_finite() || !inp.fy.is_finite() {
            self.rejected += 1;
            return;
        }
        self.inputs.set(
            inp.agent,
            AgentAction::new(inp.fx.clamp(-1.0, 1.0), inp.fy.clamp(-1.0, 1.0)),
        );
        if env.tick == tick && !seen.contains(&inp.agent) {
            seen.push(inp.agent);
        }
    }

    /// Drains client input for `tick`. Lockstep waits until every client
    /// agent has sent an input tagged with this tick.
    fn gather(&mut self, tick: u64) -> Result<()> {
        let mut seen = Vec::new();
        for env in self.io.poll()? {
            self.accept(env, tick, &mut seen);
        }
        if self.cfg.pacing == Pacing::Lockstep {
            let deadline = Instant::now() + Duration::from_secs_f64(self.cfg.input_timeout_s);
            while self
                .cfg
                .mode
                .client_agents()
                .iter()
                .any(|a| !seen.contains(a))
            {
                let left = deadline.saturating_duration_since(Instant::now());
                if left.is_zero() {
                    return Err(Error::Transport(format!("no input for tick {tick}")));
                }
                if let Some(env) = self.io.recv_timeout(left)? {
                    self.accept(env, tick, &mut seen);
                }
            }
        }
        Ok(())
    }
}

/// Runs one trial. Client disconnects abort the trial and yield an invalid
/// log rather than an error.
pub fn run_trial(
    cfg: &SessionConfig,
    model: Option<Arc<VrnnModel>>,
    io: &mut dyn SessionIo,
) -> Result<TrialLog> {
    cfg.validate()?;
    let (mut robot, mut human_local): (RobotDriver, Option<Box<dyn Policy>>) = match cfg.mode {
        SessionMode::HumanHuman => (RobotDriver::Client, None),
        SessionMode::HumanVrnn | SessionMode::HumanDecrrt => (planned_driver(cfg, model)?, None),
        SessionMode::Scripted => {
            let (r, h) = scripted_pair(cfg);
            (RobotDriver::Local(r), Some(h))
        }
        SessionMode::Replay => unreachable!("rejected by validate"),
    };
    let map = &cfg.map;
    let params = &cfg.params;
    let geom = params.geometry();
    let period = Duration::from_secs_f64(params.dt);
    let started_unix_ms = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis());
    let t0 = Instant::now();

    let mut lp = TickLoop {
        cfg,
        io,
        inputs: InputBuffer::default(),
        rejected: 0,
    };
    let mut state = TableState::at_rest(map.initial_pose);
    let mut prev = state;
    let mut history: Vec<ObservationFrame> = Vec::new();
    let mut steps: Vec<StepRecord> = Vec::new();
    let mut plan_ages = Vec::new();
    let (mut plan_errors, mut missed, mut max_tick_ms) = (0usize, 0u64, 0.0f64);
    let mut abort: Option<String> = None;

    let start_event = TrialEventPayload {
        event: TrialEventKind::Start,
        map_id: map.id.clone(),
        outcome: None,
    };
    if let Err(e) = lp
        .io
        .send(&Envelope::new(0, Message::TrialEvent(start_event)))
    {
        abort = Some(e.to_string());
    }

    let mut tick = 0u64;
    let outcome = loop {
        let tick_start = Instant::now();
        let obs = build_observation(&prev, &state, map);
        history.push(obs);
        let terminal = if check_collision(&state, map, &geom) {
            Some(Outcome::Collision)
        } else if check_success(&state, &map.goal) {
            Some(Outcome::Success)
        } else if tick >= cfg.max_ticks || abort.is_some() {
            Some(Outcome::Timeout)
        } else {
            None
        };
        let overlay = match &robot {
            RobotDriver::Planned {
                plan: Some((p, _)), ..
            } => Some(p),
            _ => None,
        };
        let sent = lp.io.send(&state_message(tick, &state, map, overlay));
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
        if let Err(e) = sent.and_then(|_| lp.gather(tick)) {
            abort = Some(e.to_string());
            steps.push(StepRecord {
                tick,
                state,
                action_robot: AgentAction::ZERO,
                action_human: AgentAction::ZERO,
                obs,
            });
            break Outcome::Timeout;
        }

        let (ar, age) = match &mut robot {
            RobotDriver::Client => (lp.inputs.get(AgentId::Robot), None),
            RobotDriver::Local(p) => (p.act(tick, &state, &history), None),
            RobotDriver::Planned { worker, plan, gain } => {
                let lockstep = cfg.pacing == Pacing::Lockstep;
                if worker.due(tick, history.len()) {
                    worker.request(PlanRequest {
                        tick,
                        state,
                        history: history.clone(),
                    });
                }
                for (birth, res) in worker.collect(lockstep) {
                    match res {
                        Ok(Some(p)) => *plan = Some((p, birth)),
                        Ok(None) => {}
                        Err(_) => plan_errors += 1,
                    }
                }
                match plan {
                    Some((p, birth)) => (
                        p_controller(&state, &p.target_at(tick), *gain),
                        Some(tick - *birth),
                    ),
                    None => (AgentAction::ZERO, None),
                }
            }
        };
        let ah = match &mut human_local {
            Some(p) => p.act(tick, &state, &history),
            None => lp.inputs.get(AgentId::Human),
        };
        if !ar.is_finite() || !ah.is_finite() {
            return Err(Error::NonFinite(format!(
                "action at tick {tick}: robot {ar:?}, human {ah:?}"
            )));
        }
        steps.push(StepRecord {
            tick,
            state,
            action_robot: ar,
            action_human: ah,
            obs,
        });
        plan_ages.push(age);
        prev = state;
        state = step(&state, &ar, &ah, params);
        tick += 1;

        let spent = tick_start.elapsed();
        max_tick_ms = max_tick_ms.max(spent.as_secs_f64() * 1e3);
        if cfg.pacing == Pacing::Realtime {
            let deadline = t0 + period * tick as u32;
            let now = Instant::now();
            if now > deadline {
                missed += 1;
            } else {
                std::thread::sleep(deadline - now);
            }
        }
    };

    let trajectory = Trajectory {
        map_id: map.id.clone(),
        params: *params,
        steps,
        outcome,
    };
    let mut turing_response = TuringAnswer::None;
    if abort.is_none() {
        let end = TrialEventPayload {
            event: TrialEventKind::End,
            map_id: map.id.clone(),
            outcome: Some(outcome),
        };
        match lp.io.send(&Envelope::new(tick, Message::TrialEvent(end))) {
            Err(e) => abort = Some(e.to_string()),
            Ok(()) if cfg.mode.asks_turing() => {
                turing_response =
                    ask_turing(lp.io, tick, Duration::from_secs_f64(cfg.turing_timeout_s))
                        .unwrap_or(TuringAnswer::None);
            }
            Ok(()) => {}
        }
    }
    let rejected_inputs = lp.rejected;
    Ok(TrialLog {
        format_version: TRIAL_LOG_FORMAT_VERSION,
        mode: cfg.mode,
        partner: cfg.mode.partner(),
        trajectory,
        wall_clock: WallClock {
            started_unix_ms,
            elapsed_s: t0.elapsed().as_secs_f64(),
            max_tick_ms,
        },
        plan_ages,
        plan_errors,
        missed_deadlines: missed,
        rejected_inputs,
        turing_response,
        valid: abort.is_none(),
        abort_reason: abort,
    })
}

fn ask_turing(io: &mut dyn SessionIo, tick: u64, timeout: Duration) -> Result<TuringAnswer> {
    let prompt = Message::TuringPrompt(TuringPromptPayload {
        question: TURING_QUESTION.into(),
    });
    io.send(&Envelope::new(tick, prompt))?;
    let deadline = Instant::now() + timeout;
    loop {
        let left = deadline.saturating_duration_since(Instant::now());
        if left.is_zero() {
            return Ok(TuringAnswer::None);
        }
        if let Some(env) = io.recv_timeout(left)? {
            if let Message::TuringResponse(r) = env.msg {
                return Ok(r.answer);
            }
        }
    }
}

/// Re-simulates a logged trial and streams the states; returns them. The
/// replayed states equal the logged ones bit for bit.
pub fn replay_session(
    traj: &Trajectory,
    map: &MapConfig,
    io: &mut dyn SessionIo,
) -> Result<Vec<TableState>> {
    if traj.map_id != map.id {
        return Err(Error::Invalid(format!(
            "log is for map {}, not {}",
            traj.map_id, map.id
        )));
    }
    traj.check_invariants()?;
    let states = replay(traj, map);
    let start = TrialEventPayload {
        event: TrialEventKind::Start,
        map_id: map.id.clone(),
        outcome: None,
    };
    io.send(&Envelope::new(0, Message::TrialEvent(start)))?;
    for (rec, s) in traj.steps.iter().zip(&states) {
        io.send(&state_message(rec.tick, s, map, None))?;
    }
    let last = traj.steps.last().map_or(0, |s| s.tick);
    let end = TrialEventPayload {
        event: TrialEventKind::End,
        map_id: map.id.clone(),
        outcome: Some(traj.outcome),
    };
    io.send(&Envelope::new(last, Message::TrialEvent(end)))?;
    Ok(states)
}
