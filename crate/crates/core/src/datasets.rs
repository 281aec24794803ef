//! Map catalog, trajectory datasets on disk, train/validation splits and
//! fixed-length training windows.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sim::{Outcome, Trajectory};
use crate::vrnn::Normalizer;
use crate::world::{Bounds, GoalRegion, MapConfig, ObservationFrame, Obstacle, Pose2, Vec2};

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRAIN_FRACTION: f64 = 0.8;
pub const DEFAULT_WINDOW_STRIDE: usize = 10;

const START_YS: [f64; 3] = [4.0, 2.5, 5.5];
const GOAL_YS: [f64; 3] = [4.0, 2.0, 6.0];
const START_X: f64 = 1.5;
const GOAL_X: f64 = 10.5;
const GOAL_RADIUS: f64 = 0.5;

fn sq(x: f64, y: f64, h: f64) -> Obstacle {
    Obstacle {
        center: Vec2::new(x, y),
        half_extent: h,
    }
}

fn layouts() -> Vec<Vec<Obstacle>> {
    vec![
        vec![sq(6.0, 4.0, 0.8)],
        vec![sq(5.5, 4.0, 0.7)],
        vec![sq(5.6, 4.0, 0.6), sq(8.5, 0.7, 0.4)],
        vec![sq(6.0, 4.0, 0.7), sq(8.6, 7.3, 0.4)],
        vec![sq(5.4, 4.0, 0.6), sq(8.0, 7.0, 0.4)],
        vec![sq(6.0, 3.7, 0.9)],
        vec![sq(6.0, 4.3, 0.9), sq(3.8, 1.0, 0.4)],
    ]
}

fn map(id: String, start_y: f64, obstacles: Vec<Obstacle>, goal_y: f64) -> MapConfig {
    MapConfig {
        id,
        initial_pose: Pose2::new(START_X, start_y, 0.0),
        obstacles,
        goal: GoalRegion {
            center: Vec2::new(GOAL_X, goal_y),
            radius: GOAL_RADIUS,
        },
        bounds: Bounds::default(),
    }
}

/// The 63 training maps: 3 start poses x 7 obstacle layouts x 3 goals.
pub fn generate_maps() -> Vec<MapConfig> {
    let mut out = Vec::with_capacity(63);
    for (si, &sy) in START_YS.iter().enumerate() {
        for (li, obstacles) in layouts().into_iter().enumerate() {
            for (gi, &gy) in GOAL_YS.iter().enumerate() {
                out.push(map(format!("s{si}-o{li}-g{gi}"), sy, obstacles.clone(), gy));
            }
        }
    }
    out
}

/// Held-out maps with obstacle layouts absent from the catalog.
pub fn unseen_maps() -> Vec<MapConfig> {
    vec![
        map("unseen-0".into(), 4.0, vec![sq(6.5, 4.0, 0.75)], 4.0),
        map(
            "unseen-1".into(),
            3.5,
            vec![sq(5.5, 3.8, 0.65), sq(8.3, 6.6, 0.4)],
            4.5,
        ),
        map("unseen-2".into(), 4.5, vec![sq(7.0, 4.2, 0.85)], 3.5),
    ]
}

/// SHA-256 over the catalog's canonical JSON.
pub fn catalog_hash(maps: &[MapConfig]) -> String {
    let json = serde_json::to_vec(maps).expect("maps serialize");
    hex::encode(Sha256::digest(json))
}

pub fn find_map<'a>(maps: &'a [MapConfig], id: &str) -> Result<&'a MapConfig> {
    maps.iter()
        .find(|m| m.id == id)
        .ok_or_else(|| Error::Invalid(format!("unknown map id {id:?}")))
}

/// Seeded shuffle of `0..n`; the first `floor(0.8 n)` indices train.
pub fn split(n: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::Invalid(format!("cannot split {n} trajectories")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (n as f64 * TRAIN_FRACTION).floor() as usize;
    let val = idx.split_off(n_train);
    Ok((idx, val))
}

/// A fixed-length slice of one trajectory's observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub traj_index: usize,
    /// Index of the first frame within the trajectory.
    pub start: usize,
    pub frames: Vec<ObservationFrame>,
}

impl Window {
    /// The (dx, dy, dcos, dsin) reconstruction target of every frame.
    pub fn targets(&self) -> Vec<[f64; 4]> {
        self.frames.iter().map(|f| f.motion()).collect()
    }
}

/// Number of windows of length `len` at `stride` in a sequence of `n` frames.
pub fn window_count(n: usize, len: usize, stride: usize) -> usize {
    if n < len || stride == 0 {
        0
    } else {
        (n - len) / stride + 1
    }
}

/// Windows from the trajectories at `indices`, in index order.
pub fn extract_windows(
    trajs: &[Trajectory],
    indices: &[usize],
    len: usize,
    stride: usize,
) -> Result<Vec<Window>> {
    if len == 0 || stride == 0 {
        return Err(Error::Invalid(
            "window length and stride must be positive".into(),
        ));
    }
    let mut out = Vec::new();
    for &ti in indices {
        let t = trajs.get(ti).ok_or_else(|| {
            Error::Invalid(format!(
                "trajectory index {ti} out of range ({})",
                trajs.len()
            ))
        })?;
        let frames = t.observations();
        for k in 0..window_count(frames.len(), len, stride) {
            let start = k * stride;
            out.push(Window {
                traj_index: ti,
                start,
                frames: frames[start..start + len].to_vec(),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
    pub map_id: String,
    pub steps: usize,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub catalog_hash: String,
    /// Seed of the train/validation split.
    pub seed: u64,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    /// Observation statistics over the training split.
    pub normalization: Normalizer,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    pub manifest: Manifest,
}

fn file_name(i: usize) -> String {
    format!("traj-{i:05}.jsonl")
}

impl Dataset {
    pub fn new(trajectories: Vec<Trajectory>, maps: &[MapConfig], seed: u64) -> Result<Self> {
        let (train, val) = split(trajectories.len(), seed)?;
        let normalization = Normalizer::fit(
            train
                .iter()
                .flat_map(|&i| trajectories[i].steps.iter().map(|s| &s.obs)),
        )?;
        let entries = trajectories
            .iter()
            .enumerate()
            .map(|(i, t)| ManifestEntry {
                file: file_name(i),
                sha256: hex::encode(Sha256::digest(t.to_jsonl().as_bytes())),
                map_id: t.map_id.clone(),
                steps: t.steps.len(),
                outcome: t.outcome,
            })
            .collect();
        let manifest = Manifest {
            format_version: DATASET_FORMAT_VERSION,
            catalog_hash: catalog_hash(maps),
            seed,
            train,
            val,
            normalization,
            entries,
        };
        Ok(Dataset {
            trajectories,
            manifest,
        })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Writes one JSON-lines file per trajectory plus the manifest.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (t, e) in self.trajectories.iter().zip(&self.manifest.entries) {
            let path = dir.join(&e.file);
            fs::write(&path, t.to_jsonl()).map_err(|err| Error::io(&path, err))?;
        }
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Loads and verifies a saved dataset. Every file's checksum is checked
    /// before it is parsed.
    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let probe: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: mpath.clone(),
            line: 1,
            msg: e.to_string(),
        })?;
        let found = probe
            .get("format_version")
            .and_then(|v| v.as_u64())
            .unwrap_or(0) as u32;
        if found != DATASET_FORMAT_VERSION {
            return Err(Error::Version {
                path: mpath,
                expected: DATASET_FORMAT_VERSION,
                found,
            });
        }
        let manifest: Manifest = serde_json::from_value(probe).map_err(|e| Error::Format {
            path: mpath.clone(),
            line: 1,
            msg: e.to_string(),
        })?;
        let mut all: Vec<usize> = manifest
            .train
            .iter()
            .chain(&manifest.val)
            .copied()
            .collect();
        all.sort_unstable();
        if all != (0..manifest.entries.len()).collect::<Vec<_>>() {
            return Err(Error::Format {
                path: mpath,
                line: 1,
                msg: "split indices do not partition the entries".into(),
            });
        }
        let mut trajectories = Vec::with_capacity(manifest.entries.len());
        for e in &manifest.entries {
            let path: PathBuf = dir.join(&e.file);
            let bytes = fs::read(&path).map_err(|err| Error::io(&path, err))?;
            if hex::encode(Sha256::digest(&bytes)) != e.sha256 {
                return Err(Error::Checksum(path));
            }
            let t = Trajectory::read_jsonl(BufReader::new(bytes.as_slice()), &path)?;
            trajectories.push(t);
        }
        Ok(Dataset {
            trajectories,
            manifest,
        })
    }

    /// Fails unless the dataset was collected on `maps`.
    pub fn check_catalog(&self, maps: &[MapConfig]) -> Result<()> {
        let want = catalog_hash(maps);
        if self.manifest.catalog_hash != want {
            return Err(Error::Invalid(format!(
                "dataset was collected on map catalog {}, current catalog is {want}",
                self.manifest.catalog_hash
            )));
        }
        Ok(())
    }
}
