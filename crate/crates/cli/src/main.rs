//! `cocarry`: map generation, scripted collection, training, rollouts,
//! plan evaluation, live sessions and replay.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 runtime failure.

mod plot;

use std::fs;
use std::io::Write as _;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cocarry::datasets::{generate_maps, unseen_maps, Dataset};
use cocarry::evaluation::{
    collect_dataset, format_hil_report, generate_plan_sets, hil_report, plan_report,
    train_on_dataset, EvalPlansConfig, TrainConfig,
};
use cocarry::metrics::format_table;
use cocarry::scripted::{demo_pair, Mode, NavStyle};
use cocarry::session::{
    accept_ws, replay_session, serve, NullIo, SessionConfig, SessionIo, SessionMode, TrialLog,
    DEFAULT_MAX_TICKS,
};
use cocarry::sim::{run_episode, Outcome, SimParams};
use cocarry::vrnn::{sample_rollout, RolloutRequest, VrnnModel};
use cocarry::world::MapConfig;
use cocarry::Error;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Parser)]
#[command(
    name = "cocarry",
    version,
    about = "Cooperative table-carrying toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone, Copy)]
struct Common {
    /// Seed for every random choice of the command.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Map catalog operations.
    Maps {
        #[command(subcommand)]
        action: MapsAction,
    },
    /// Collect demonstrations into a dataset directory.
    Collect {
        #[arg(long, value_enum)]
        policy: CollectPolicy,
        #[arg(long)]
        out: PathBuf,
        /// Demonstrations to collect (scripted) or trials to serve (remote).
        #[arg(long, default_value_t = 339)]
        count: usize,
        /// Port for remote collection.
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[command(flatten)]
        common: Common,
    },
    /// Train the trajectory model.
    Train {
        /// JSON training configuration; missing fields take defaults.
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory; scripted demonstrations are collected when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Sample model rollouts on one map and write poses, CSV and SVG.
    Rollout {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Map id from the catalog or the unseen set, or a map JSON file.
        #[arg(long)]
        map: String,
        #[arg(long, default_value_t = 16)]
        samples: usize,
        #[arg(long, default_value_t = 150)]
        horizon: usize,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Compare model rollouts and RRT plans with held-out demonstrations.
    EvalPlans {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory; its validation split is the ground truth.
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = 8)]
        samples: usize,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Summarize trial logs per session mode.
    EvalHil {
        #[arg(long)]
        logs: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Serve live trials over WebSocket.
    Serve {
        #[arg(long)]
        port: u16,
        #[arg(long, value_enum, default_value_t = ServeMode::HumanVrnn)]
        mode: ServeMode,
        #[arg(long)]
        map: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Stop after this many trials.
        #[arg(long)]
        trials: Option<usize>,
        /// Clients per trial; 2 lets each human-human joystick connect separately.
        #[arg(long, default_value_t = 1)]
        clients: usize,
        #[arg(long)]
        logs: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Re-simulate a trial log, verify it, and optionally stream it.
    Replay {
        #[arg(long)]
        log: PathBuf,
        /// Stream the replay to one WebSocket client on this port.
        #[arg(long)]
        port: Option<u16>,
    },
}

#[derive(Debug, Subcommand)]
enum MapsAction {
    /// Write the map catalog and a manifest.
    Generate {
        #[arg(long)]
        out: PathBuf,
        /// Write the held-out maps instead of the catalog.
        #[arg(long)]
        unseen: bool,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CollectPolicy {
    Scripted,
    Remote,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ServeMode {
    HumanHuman,
    HumanVrnn,
    HumanDecrrt,
    Scripted,
}

impl From<ServeMode> for SessionMode {
    fn from(m: ServeMode) -> Self {
        match m {
            ServeMode::HumanHuman => SessionMode::HumanHuman,
            ServeMode::HumanVrnn => SessionMode::HumanVrnn,
            ServeMode::HumanDecrrt => SessionMode::HumanDecrrt,
            ServeMode::Scripted => SessionMode::Scripted,
        }
    }
}

enum Failure {
    Usage(String),
    Data(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Format { .. }
            | Error::Version { .. }
            | Error::Checksum(_)
            | Error::Io { .. }
            | Error::Json(_)
            | Error::Invalid(_)
            | Error::NoObstacles => Failure::Data(e.to_string()),
            Error::Shape { .. } | Error::NonFinite(_) | Error::Transport(_) => {
                Failure::Runtime(e.to_string())
            }
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))?;
    write_file(path, text.as_bytes())
}

fn all_maps() -> Vec<MapConfig> {
    let mut maps = generate_maps();
    maps.extend(unseen_maps());
    maps
}

fn resolve_map(spec: &str) -> CliResult<MapConfig> {
    let path = Path::new(spec);
    if spec.ends_with(".json") && path.exists() {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let map = MapConfig::from_json(&text)?;
        map.validate(&SimParams::default().geometry())?;
        return Ok(map);
    }
    all_maps()
        .into_iter()
        .find(|m| m.id == spec)
        .ok_or_else(|| Failure::Data(format!("unknown map '{spec}'")))
}

fn load_model(path: &Path) -> CliResult<Arc<VrnnModel>> {
    Ok(Arc::new(VrnnModel::load(path)?))
}

#[derive(Serialize)]
struct MapManifestEntry {
    id: String,
    file: String,
    sha256: String,
}

#[derive(Serialize)]
struct MapManifest {
    format_version: u32,
    catalog_hash: String,
    maps: Vec<MapManifestEntry>,
}

fn maps_generate(out: &Path, unseen: bool) -> CliResult {
    let maps = if unseen {
        unseen_maps()
    } else {
        generate_maps()
    };
    let mut entries = Vec::with_capacity(maps.len());
    for m in &maps {
        let text = m.to_json()?;
        let file = format!("{}.json", m.id);
        write_file(&out.join(&file), text.as_bytes())?;
        entries.push(MapManifestEntry {
            id: m.id.clone(),
            file,
            sha256: hex::encode(Sha256::digest(text.as_bytes())),
        });
    }
    let manifest = MapManifest {
        format_version: 1,
        catalog_hash: cocarry::datasets::catalog_hash(&maps),
        maps: entries,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    println!("wrote {} maps to {}", maps.len(), out.display());
    Ok(())
}

fn collect(policy: CollectPolicy, out: &Path, count: usize, port: u16, seed: u64) -> CliResult {
    let maps = generate_maps();
    let params = SimParams::default();
    let data = match policy {
        CollectPolicy::Scripted => {
            let cfg = TrainConfig {
                demos: count,
                demo_seed: seed,
                split_seed: seed,
                ..TrainConfig::default()
            };
            collect_dataset(&maps, &params, &cfg)?
        }
        CollectPolicy::Remote => {
            let listener = TcpListener::bind(("0.0.0.0", port))
                .map_err(|e| Failure::Runtime(e.to_string()))?;
            let mut trajs = Vec::new();
            for (i, map) in maps.iter().cycle().take(count).enumerate() {
                let cfg = SessionConfig {
                    seed: seed.wrapping_add(i as u64),
                    ..SessionConfig::new(SessionMode::HumanHuman, map.clone())
                };
                println!(
                    "trial {i}: map {} waiting for a client on port {port}",
                    map.id
                );
                let handle = serve(
                    listener
                        .try_clone()
                        .map_err(|e| Failure::Runtime(e.to_string()))?,
                    cfg,
                    None,
                    1,
                    Some(1),
                    None,
                )?;
                let log = handle
                    .join()?
                    .pop()
                    .ok_or_else(|| Failure::Runtime("server returned no trial".into()))?;
                if log.valid && log.trajectory.outcome == Outcome::Success {
                    trajs.push(log.trajectory);
                }
            }
            Dataset::new(trajs, &maps, seed)?
        }
    };
    data.save(out)?;
    println!(
        "wrote {} trajectories ({} train / {} val) to {}",
        data.len(),
        data.manifest.train.len(),
        data.manifest.val.len(),
        out.display()
    );
    Ok(())
}

fn train(config: &Path, data: Option<&Path>, out: &Path, seed: u64) -> CliResult {
    let text = fs::read_to_string(config).map_err(|e| io_err(config, e))?;
    let mut cfg: TrainConfig = serde_json::from_str(&text)
        .map_err(|e| Failure::Data(format!("{}: {e}", config.display())))?;
    cfg.hyper.seed ^= seed;
    cfg.hyper.validate()?;
    let maps = generate_maps();
    let dataset = match data {
        Some(dir) => {
            let d = Dataset::load(dir)?;
            d.check_catalog(&maps)?;
            d
        }
        None => collect_dataset(&maps, &SimParams::default(), &cfg)?,
    };
    let report = train_on_dataset(&dataset, &cfg, |s| {
        println!(
            "epoch {:>3}  train {:.4}  val {:.4}  ({:.1}s)",
            s.epoch, s.train_loss, s.val_loss, s.seconds
        );
        let _ = std::io::stdout().flush();
    })?;
    report.model.save(out)?;
    println!(
        "validation loss {:.4} -> {:.4}; checkpoint {}",
        report.initial_val_loss,
        report.best_val_loss,
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct RolloutFile<'a> {
    map_id: &'a str,
    seed: u64,
    history_len: usize,
    samples: Vec<Vec<cocarry::world::Pose2>>,
}

/// History comes from a scripted pair driving the first `H` ticks of the
/// map in a seeded mode.
fn rollout(
    checkpoint: &Path,
    map: &str,
    samples: usize,
    horizon: usize,
    temperature: f64,
    out: &Path,
    seed: u64,
) -> CliResult {
    let model = load_model(checkpoint)?;
    let map = resolve_map(map)?;
    let params = SimParams::default();
    let h = model.hyper.history_len;
    let mode = if seed.is_multiple_of(2) {
        Mode::Above
    } else {
        Mode::Below
    };
    let (mut a, mut b) = demo_pair(&map, &params, mode, NavStyle::default(), seed);
    let warm = run_episode(&mut a, &mut b, &map, &params, (h - 1) as u64)?;
    if warm.steps.len() < h {
        return Err(Failure::Data(format!(
            "map {} ends before the {h}-step history",
            map.id
        )));
    }
    let history = warm.observations();
    let start = warm.steps[h - 1].state.pose;
    let req = RolloutRequest {
        history: &history[..h],
        start,
        map: &map,
        n_samples: samples,
        horizon,
        seed,
        temperature,
    };
    let batch = sample_rollout(&model, &req)?;

    let file = RolloutFile {
        map_id: &map.id,
        seed,
        history_len: h,
        samples: batch.poses.clone(),
    };
    write_json(&out.join("rollouts.json"), &file)?;
    let mut csv = String::from("sample,step,x,y,theta\n");
    for (i, seq) in batch.poses.iter().enumerate() {
        for (k, p) in seq.iter().enumerate() {
            csv.push_str(&format!("{i},{k},{},{},{}\n", p.x, p.y, p.theta));
        }
    }
    write_file(&out.join("rollouts.csv"), csv.as_bytes())?;
    let svg = plot::render_svg(&map, &warm.poses(), &batch.poses);
    write_file(&out.join("rollouts.svg"), svg.as_bytes())?;
    println!(
        "wrote {} rollouts of {} steps to {}",
        batch.poses.len(),
        horizon,
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalPlansFile {
    trajectories: usize,
    samples: usize,
    rrt_failures: usize,
    rows: Vec<cocarry::metrics::MetricReport>,
}

fn eval_plans(
    checkpoint: &Path,
    gt: &Path,
    samples: usize,
    json: Option<&Path>,
    seed: u64,
) -> CliResult {
    let model = load_model(checkpoint)?;
    let data = Dataset::load(gt)?;
    let held_out: Vec<_> = data
        .manifest
        .val
        .iter()
        .map(|&i| data.trajectories[i].clone())
        .collect();
    let cfg = EvalPlansConfig {
        n_samples: samples,
        seed,
        ..EvalPlansConfig::default()
    };
    let sets = generate_plan_sets(&model, &held_out, &all_maps(), &cfg)?;
    let rows = plan_report(&sets)?;
    print!("{}", format_table(&rows));
    println!(
        "{} held-out trajectories, {samples} plans each; {} RRT failures",
        sets.gt.len(),
        sets.rrt_failures
    );
    if let Some(p) = json {
        write_json(
            p,
            &EvalPlansFile {
                trajectories: sets.gt.len(),
                samples,
                rrt_failures: sets.rrt_failures,
                rows,
            },
        )?;
    }
    Ok(())
}

fn eval_hil(logs: &Path, json: Option<&Path>) -> CliResult {
    let mut files: Vec<PathBuf> = fs::read_dir(logs)
        .map_err(|e| io_err(logs, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Failure::Data(format!(
            "no trial logs in {}",
            logs.display()
        )));
    }
    let logs = files
        .iter()
        .map(|p| TrialLog::load(p))
        .collect::<Result<Vec<_>, _>>()?;
    let report = hil_report(&logs)?;
    print!("{}", format_hil_report(&report));
    if let Some(p) = json {
        write_json(p, &report)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn serve_cmd(
    port: u16,
    mode: ServeMode,
    map: &str,
    checkpoint: Option<&Path>,
    trials: Option<usize>,
    clients: usize,
    logs: Option<PathBuf>,
    seed: u64,
) -> CliResult {
    let mode: SessionMode = mode.into();
    let model = match (mode, checkpoint) {
        (SessionMode::HumanVrnn, None) => {
            return Err(Failure::Usage("human-vrnn needs --checkpoint".into()))
        }
        (_, Some(p)) => Some(load_model(p)?),
        (_, None) => None,
    };
    let map = resolve_map(map)?;
    if let Some(dir) = &logs {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let mut cfg = SessionConfig::new(mode, map);
    cfg.seed = seed;
    cfg.max_ticks = DEFAULT_MAX_TICKS;
    let listener =
        TcpListener::bind(("0.0.0.0", port)).map_err(|e| Failure::Runtime(e.to_string()))?;
    println!(
        "serving {mode:?} on ws://{}",
        listener
            .local_addr()
            .map_err(|e| Failure::Runtime(e.to_string()))?
    );
    let handle = serve(listener, cfg, model, clients, trials, logs)?;
    for log in handle.join()? {
        println!(
            "trial: {:?} after {:.2}s, valid {}",
            log.trajectory.outcome,
            log.trajectory.duration(),
            log.valid
        );
    }
    Ok(())
}

fn replay_cmd(log: &Path, port: Option<u16>) -> CliResult {
    let trial = TrialLog::load(log)?;
    let map = resolve_map(&trial.trajectory.map_id)?;
    let mut io: Box<dyn SessionIo> = match port {
        None => Box::new(NullIo),
        Some(p) => {
            let listener =
                TcpListener::bind(("0.0.0.0", p)).map_err(|e| Failure::Runtime(e.to_string()))?;
            println!("waiting for a viewer on port {p}");
            Box::new(accept_ws(&listener)?)
        }
    };
    let states = replay_session(&trial.trajectory, &map, io.as_mut())?;
    let mismatches = states
        .iter()
        .zip(&trial.trajectory.steps)
        .filter(|(s, r)| **s != r.state)
        .count();
    if mismatches > 0 {
        return Err(Failure::Data(format!(
            "replay diverges from the log at {mismatches} ticks"
        )));
    }
    println!(
        "replayed {} ticks on {}: {:?}, bit-exact",
        states.len(),
        map.id,
        trial.trajectory.outcome
    );
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Maps {
            action: MapsAction::Generate { out, unseen },
        } => maps_generate(&out, unseen),
        Command::Collect {
            policy,
            out,
            count,
            port,
            common,
        } => collect(policy, &out, count, port, common.seed),
        Command::Train {
            config,
            data,
            out,
            common,
        } => train(&config, data.as_deref(), &out, common.seed),
        Command::Rollout {
            checkpoint,
            map,
            samples,
            horizon,
            temperature,
            out,
            common,
        } => rollout(
            &checkpoint,
            &map,
            samples,
            horizon,
            temperature,
            &out,
            common.seed,
        ),
        Command::EvalPlans {
            checkpoint,
            gt,
            samples,
            json,
            common,
        } => eval_plans(&checkpoint, &gt, samples, json.as_deref(), common.seed),
        Command::EvalHil { logs, json } => eval_hil(&logs, json.as_deref()),
        Command::Serve {
            port,
            mode,
            map,
            checkpoint,
            trials,
            clients,
            logs,
            common,
        } => serve_cmd(
            port,
            mode,
            &map,
            checkpoint.as_deref(),
            trials,
            clients,
            logs,
            common.seed,
        ),
        Command::Replay { log, port } => replay_cmd(&log, port),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("usage error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Data(m)) => {
            eprintln!("data error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("runtime error: {m}");
            ExitCode::from(3)
        }
    }
}
