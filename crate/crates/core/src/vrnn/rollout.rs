use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffcore::{Eval, Tensor};
use crate::error::{Error, Result};
use crate::world::{ego_headings, MapConfig, ObservationFrame, Pose2, Vec2};

use super::{model, VrnnModel, INPUT_DIM, OUTPUT_DIM};

/// Predicted (dx, dy, dcos, dsin) per step.
pub type DeltaSeq = Vec<[f64; OUTPUT_DIM]>;

/// Accumulates motion deltas onto a pose. Orientation is tracked as a
/// (cos, sin) pair that is renormalized after every step.
#[derive(Debug, Clone, Copy)]
pub struct PoseIntegrator {
    position: Vec2,
    cos: f64,
    sin: f64,
}

impl PoseIntegrator {
    const MIN_NORM: f64 = 1e-9;

    pub fn new(start: Pose2) -> Self {
        PoseIntegrator {
            position: start.position(),
            cos: start.theta.cos(),
            sin: start.theta.sin(),
        }
    }

    pub fn pose(&self) -> Pose2 {
        Pose2::new(self.position.x, self.position.y, self.sin.atan2(self.cos))
    }

    pub fn apply(&mut self, d: [f64; OUTPUT_DIM]) -> Result<Pose2> {
        let (c, s) = (self.cos + d[2], self.sin + d[3]);
        let n = c.hypot(s);
        if !(n > Self::MIN_NORM) || !d[0].is_finite() || !d[1].is_finite() {
            return Err(Error::NonFinite(format!(
                "degenerate orientation update ({c}, {s})"
            )));
        }
        self.position = self.position + Vec2::new(d[0], d[1]);
        self.cos = c / n;
        self.sin = s / n;
        Ok(self.pose())
    }
}

/// Poses reached by applying `deltas` from `start`, including `start`.
pub fn integrate_deltas(start: Pose2, deltas: &[[f64; OUTPUT_DIM]]) -> Result<Vec<Pose2>> {
    let mut it = PoseIntegrator::new(start);
    let mut out = Vec::with_capacity(deltas.len() + 1);
    out.push(start);
    for d in deltas {
        out.push(it.apply(*d)?);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct RolloutRequest<'a> {
    /// Observed frames; the last `history_len` are used for conditioning.
    pub history: &'a [ObservationFrame],
    /// Pose at the last history frame.
    pub start: Pose2,
    pub map: &'a MapConfig,
    pub n_samples: usize,
    pub horizon: usize,
    pub seed: u64,
    /// Scales the latent noise; zero gives the mean rollout.
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub deltas: Vec<DeltaSeq>,
    /// `horizon + 1` poses per sample, starting at the request's start pose.
    pub poses: Vec<Vec<Pose2>>,
}

fn sample_latent(
    g: &mut Eval,
    p: &model::GaussianParams<Tensor>,
    rng: &mut ChaCha8Rng,
    temp: f64,
) -> Result<Tensor> {
    let noise = Tensor::from_fn(p.mean.rows(), p.mean.cols(), |_, _| {
        let e: f64 = StandardNormal.sample(rng);
        e * temp
    });
    model::reparameterize(g, p, &noise)
}

/// Draws `n_samples` futures in one batch. Every sample shares the history;
/// each generated step is fed back as the next input, with the goal and
/// obstacle headings recomputed from the integrated pose.
pub fn sample_rollout(model: &VrnnModel, req: &RolloutRequest) -> Result<RolloutBatch> {
    let hyper = &model.hyper;
    let w = &model.params;
    if req.history.len() < hyper.history_len {
        return Err(Error::Invalid(format!(
            "rollout needs {} history frames, got {}",
            hyper.history_len,
            req.history.len()
        )));
    }
    if req.n_samples == 0 || !(req.temperature >= 0.0) {
        return Err(Error::Invalid(
            "rollout needs at least one sample and a non-negative temperature".into(),
        ));
    }
    let n = req.n_samples;
    let mut g = Eval;
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let input = |frame: &[f64; INPUT_DIM]| {
        let row = model.normalizer.normalize(frame);
        Tensor::from_fn(n, INPUT_DIM, |_, c| row[c])
    };

    let mut h = Tensor::zeros(n, hyper.gru_hidden);
    for frame in &req.history[req.history.len() - hyper.history_len..] {
        let phi_x = model::embed_x(&mut g, w, &input(&frame.to_array()))?;
        let q = model::posterior(&mut g, w, &h, &phi_x)?;
        let z = sample_latent(&mut g, &q, &mut rng, req.temperature)?;
        let phi_z = model::embed_z(&mut g, w, &z)?;
        h = model::recurrence(&mut g, w, &h, &phi_z, &phi_x)?;
    }

    let mut integrators = vec![PoseIntegrator::new(req.start); n];
    let mut deltas = vec![Vec::with_capacity(req.horizon); n];
    let mut poses: Vec<Vec<Pose2>> = (0..n).map(|_| vec![req.start]).collect();
    for step in 0..req.horizon {
        let p = model::prior(&mut g, w, &h)?;
        let z = sample_latent(&mut g, &p, &mut rng, req.temperature)?;
        let phi_z = model::embed_z(&mut g, w, &z)?;
        let out = model::decode_embedded(&mut g, w, &phi_z, &h)?;
        let mut next = Vec::with_capacity(n * INPUT_DIM);
        for i in 0..n {
            let d = model.normalizer.denormalize_motion(out.row_slice(i));
            let pose = integrators[i]
                .apply(d)
                .map_err(|e| Error::NonFinite(format!("sample {i} at step {step}: {e}")))?;
            let (goal, obs) = ego_headings(&pose, req.map);
            let frame = [d[0], d[1], d[2], d[3], goal.x, goal.y, obs.x, obs.y];
            next.extend(model.normalizer.normalize(&frame));
            deltas[i].push(d);
            poses[i].push(pose);
        }
        let x = Tensor::new(n, INPUT_DIM, next)?;
        let phi_x = model::embed_x(&mut g, w, &x)?;
        h = model::recurrence(&mut g, w, &h, &phi_z, &phi_x)?;
    }
    Ok(RolloutBatch { deltas, poses })
}
