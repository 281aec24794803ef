//! End-to-end workflows shared by the command line and the acceptance
//! suite: training from scripted data, plan comparison against held-out
//! demonstrations, and human-in-the-loop style trials with a scripted
//! partner.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::datasets::{extract_windows, find_map, Dataset, DEFAULT_WINDOW_STRIDE};
use crate::error::{Error, Result};
use crate::metrics::{
    fd_pose_batches, format_table, interaction_series, l2_to_gt, task_stats, temporal_variance,
    MetricReport,
};
use crate::planners::{rollout_end, rrt_plan, RrtParams};
use crate::scripted::{collect_demos, noisy_human};
use crate::session::{
    loopback, run_trial, AgentId, Pacing, ScriptedClient, SessionConfig, SessionMode, TrialLog,
    TuringAnswer,
};
use crate::sim::{SimParams, Trajectory};
use crate::vrnn::{
    sample_rollout, train_with_progress, EpochStats, HyperParams, RolloutRequest, TrainReport,
    VrnnModel,
};
use crate::world::{MapConfig, Pose2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Scripted demonstrations to collect when no dataset is given.
    pub demos: usize,
    pub demo_seed: u64,
    pub split_seed: u64,
    pub max_demo_ticks: u64,
    pub window_stride: usize,
    pub hyper: HyperParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            demos: 200,
            demo_seed: 1,
            split_seed: 0,
            max_demo_ticks: 900,
            window_stride: DEFAULT_WINDOW_STRIDE,
            hyper: HyperParams {
                kl_weight: 0.1,
                learning_rate: 1e-3,
                epochs: 20,
                ..HyperParams::default()
            },
        }
    }
}

/// Scripted demonstrations on `maps`, split and normalized.
pub fn collect_dataset(
    maps: &[MapConfig],
    params: &SimParams,
    cfg: &TrainConfig,
) -> Result<Dataset> {
    let (trajs, _) = collect_demos(maps, params, cfg.demos, cfg.max_demo_ticks, cfg.demo_seed)?;
    Dataset::new(trajs, maps, cfg.split_seed)
}

/// Trains on the dataset's own split.
pub fn train_on_dataset(
    data: &Dataset,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainReport> {
    let t = cfg.hyper.window_len;
    let train = extract_windows(
        &data.trajectories,
        &data.manifest.train,
        t,
        cfg.window_stride,
    )?;
    let val = extract_windows(&data.trajectories, &data.manifest.val, t, cfg.window_stride)?;
    train_with_progress(&train, &val, &cfg.hyper, on_epoch)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPlansConfig {
    /// Plans per held-out trajectory, for each method.
    pub n_samples: usize,
    pub temperature: f64,
    pub rrt: RrtParams,
    pub seed: u64,
}

impl Default for EvalPlansConfig {
    fn default() -> Self {
        EvalPlansConfig {
            n_samples: 8,
            temperature: 1.0,
            rrt: RrtParams::default(),
            seed: 0,
        }
    }
}

/// Plans generated from the same start as each held-out demonstration.
#[derive(Debug, Clone, Default)]
pub struct PlanSets {
    /// Ground-truth continuation after the shared history.
    pub gt: Vec<Vec<Pose2>>,
    /// `vrnn[i]` and `rrt[i]` hold the plans for `gt[i]`.
    pub vrnn: Vec<Vec<Vec<Pose2>>>,
    pub rrt: Vec<Vec<Vec<Pose2>>>,
    pub rrt_failures: usize,
}

/// For every demonstration long enough to hold the model history: the
/// model samples from the observed history, and RRT plans from the pose
/// at the end of that history. Both methods plan to the goal: model
/// rollouts get twice the ground-truth continuation and stop at goal entry
/// or closest approach, as the receding-horizon planner scores them.
pub fn generate_plan_sets(
    model: &VrnnModel,
    demos: &[Trajectory],
    maps: &[MapConfig],
    cfg: &EvalPlansConfig,
) -> Result<PlanSets> {
    if cfg.n_samples == 0 {
        return Err(Error::Invalid(
            "eval-plans needs at least one sample".into(),
        ));
    }
    let h = model.hyper.history_len;
    let mut out = PlanSets::default();
    for (i, traj) in demos.iter().enumerate() {
        if traj.steps.len() < h + 2 {
            continue;
        }
        let map = find_map(maps, &traj.map_id)?;
        let table = traj.params.geometry();
        let obs = traj.observations();
        let poses = traj.poses();
        let gt = poses[h - 1..].to_vec();
        let seed = cfg.seed.wrapping_add(i as u64);
        let req = RolloutRequest {
            history: &obs[..h],
            start: gt[0],
            map,
            n_samples: cfg.n_samples,
            horizon: 2 * (gt.len() - 1),
            seed,
            temperature: cfg.temperature,
        };
        let batch = sample_rollout(model, &req)?;
        let mut rrt = Vec::with_capacity(cfg.n_samples);
        for k in 0..cfg.n_samples as u64 {
            let p = RrtParams {
                seed: seed.wrapping_mul(1000).wrapping_add(k),
                ..cfg.rrt
            };
            match rrt_plan(gt[0], map, &table, &p, 0, traj.params.dt)?.plan() {
                Some(plan) => rrt.push(plan.per_tick_poses()),
                None => out.rrt_failures += 1,
            }
        }
        out.gt.push(gt);
        let to_goal = batch
            .poses
            .into_iter()
            .map(|p| p[..=rollout_end(&p, map).max(1)].to_vec())
            .collect();
        out.vrnn.push(to_goal);
        out.rrt.push(rrt);
    }
    if out.gt.is_empty() {
        return Err(Error::Invalid(format!(
            "no demonstration is longer than the {h}-step history"
        )));
    }
    Ok(out)
}

fn method_row(name: &str, plans: &[Vec<Vec<Pose2>>], gt: &[Vec<Pose2>]) -> Result<MetricReport> {
    let mut l2 = Vec::new();
    for (set, g) in plans.iter().zip(gt) {
        for p in set {
            l2.push(l2_to_gt(p, g)?);
        }
    }
    if l2.is_empty() {
        return Err(Error::Invalid(format!("{name} produced no plans")));
    }
    let flat: Vec<Vec<Pose2>> = plans.iter().flatten().cloned().collect();
    let (fd, per) = fd_pose_batches(&flat, gt)?;
    let row = MetricReport {
        method: name.into(),
        l2: Some(l2.iter().sum::<f64>() / l2.len() as f64),
        ..Default::default()
    };
    Ok(row.with_fd(fd, per).with_var(temporal_variance(&flat)?))
}

/// Rows for the model, RRT and the ground truth compared with itself.
pub fn plan_report(sets: &PlanSets) -> Result<Vec<MetricReport>> {
    Ok(vec![
        method_row("VRNN", &sets.vrnn, &sets.gt)?,
        method_row("RRT", &sets.rrt, &sets.gt)?,
        {
            let (fd, per) = fd_pose_batches(&sets.gt, &sets.gt)?;
            let row = MetricReport {
                method: "Ground truth".into(),
                l2: Some(0.0),
                ..Default::default()
            };
            row.with_fd(fd, per).with_var(temporal_variance(&sets.gt)?)
        },
    ])
}

/// Turing answers of one condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TuringCounts {
    pub human: usize,
    pub robot: usize,
    pub none: usize,
}

impl TuringCounts {
    /// Share of answered trials judged human.
    pub fn human_rate(&self) -> Option<f64> {
        let answered = self.human + self.robot;
        (answered > 0).then(|| self.human as f64 / answered as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HilModeReport {
    pub mode: SessionMode,
    pub trials: usize,
    pub invalid: usize,
    pub row: MetricReport,
    pub turing: TuringCounts,
    /// Mean absolute interaction force over acting ticks, N.
    pub mean_abs_interaction: f64,
}

/// Task statistics, Turing answers and interaction force per session
/// mode. Invalid trials are counted but excluded from the statistics.
pub fn hil_report(logs: &[TrialLog]) -> Result<Vec<HilModeReport>> {
    let mut by_mode: BTreeMap<String, Vec<&TrialLog>> = BTreeMap::new();
    for l in logs {
        by_mode
            .entry(serde_json::to_string(&l.mode)?)
            .or_default()
            .push(l);
    }
    let mut out = Vec::new();
    for group in by_mode.values() {
        let mode = group[0].mode;
        let valid: Vec<&TrialLog> = group.iter().copied().filter(|l| l.valid).collect();
        let invalid = group.len() - valid.len();
        let name = serde_json::to_string(&mode)?.trim_matches('"').to_string();
        if valid.is_empty() {
            return Err(Error::Invalid(format!("mode {name} has no valid trials")));
        }
        let trajs: Vec<Trajectory> = valid.iter().map(|l| l.trajectory.clone()).collect();
        let stats = task_stats(&trajs)?;
        let mut turing = TuringCounts::default();
        for l in &valid {
            match l.turing_response {
                TuringAnswer::Human => turing.human += 1,
                TuringAnswer::Robot => turing.robot += 1,
                TuringAnswer::None => turing.none += 1,
            }
        }
        let forces: Vec<f64> = trajs.iter().flat_map(interaction_series).collect();
        let mean_abs_interaction = if forces.is_empty() {
            0.0
        } else {
            forces.iter().map(|f| f.abs()).sum::<f64>() / forces.len() as f64
        };
        out.push(HilModeReport {
            mode,
            trials: group.len(),
            invalid,
            row: MetricReport {
                method: name,
                ..Default::default()
            }
            .with_task(&stats),
            turing,
            mean_abs_interaction,
        });
    }
    Ok(out)
}

/// Plain-text rendering of [`hil_report`].
pub fn format_hil_report(reports: &[HilModeReport]) -> String {
    let rows: Vec<MetricReport> = reports.iter().map(|r| r.row.clone()).collect();
    let mut s = format_table(&rows);
    for r in reports {
        let rate = r
            .turing
            .human_rate()
            .map_or_else(|| "-".into(), |v| format!("{:.1}%", 100.0 * v));
        s.push_str(&format!(
            "{}: {} trials ({} invalid), judged human {rate}, mean |interaction| {:.3} N\n",
            r.row.method, r.trials, r.invalid, r.mean_abs_interaction
        ));
    }
    s
}

/// Lockstep trials against a scripted noisy human over the in-process
/// transport, `per_map` trials per map. Trial `k` on a map uses partner
/// seed `seed + k` and session seed `seed + k`.
pub fn scripted_partner_trials(
    mode: SessionMode,
    model: Option<Arc<VrnnModel>>,
    maps: &[MapConfig],
    per_map: usize,
    base: &SessionConfig,
    seed: u64,
) -> Result<Vec<TrialLog>> {
    if !matches!(mode, SessionMode::HumanVrnn | SessionMode::HumanDecrrt) {
        return Err(Error::Invalid(
            "scripted partner trials need a planner mode".into(),
        ));
    }
    let mut logs = Vec::with_capacity(maps.len() * per_map);
    for map in maps {
        for k in 0..per_map as u64 {
            let cfg = SessionConfig {
                mode,
                map: map.clone(),
                pacing: Pacing::Lockstep,
                seed: seed.wrapping_add(k),
                turing_timeout_s: 5.0,
                ..base.clone()
            };
            let human = noisy_human(map, &cfg.params, seed.wrapping_add(k));
            let (mut server, client) = loopback();
            let join = ScriptedClient {
                agent: AgentId::Human,
                policy: human,
                answer: TuringAnswer::None,
                drop_after: None,
            }
            .spawn(client);
            let log = run_trial(&cfg, model.clone(), &mut server);
            drop(server);
            join.join()
                .map_err(|_| Error::Transport("scripted client panicked".into()))?;
            logs.push(log?);
        }
    }
    Ok(logs)
}
