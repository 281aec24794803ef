//! Variational recurrent model of joint table motion.
//!
//! Each step embeds the 8-dim observation, infers a Gaussian latent
//! (posterior from hidden state and observation, prior from hidden state
//! alone), reconstructs the motion deltas from the embedded latent and the
//! hidden state, and advances a GRU on both embeddings. Training minimizes
//! squared reconstruction error plus weighted KL(posterior || prior) over the
//! whole window. Sampling conditions on observed history through the
//! posterior, then generates from the prior, feeding predictions back in.

mod checkpoint;
pub mod model;
mod params;
mod rollout;
mod train;

use serde::{Deserialize, Serialize};

use crate::diffcore::{Eval, Graph, Tensor};
use crate::error::{Error, Result};
use crate::world::ObservationFrame;

pub use checkpoint::CHECKPOINT_FORMAT_VERSION;
pub use model::GaussianParams;
pub use params::{
    expected_shapes, GaussianHead, GruCell, HyperParams, Linear, Mlp2, VrnnParams, VrnnWeights,
    INPUT_DIM, OUTPUT_DIM,
};
pub use rollout::{
    integrate_deltas, sample_rollout, DeltaSeq, PoseIntegrator, RolloutBatch, RolloutRequest,
};
pub use train::{train, train_with_progress, EpochStats, TrainReport};

/// Per-dimension standardization of observation frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: [f64; INPUT_DIM],
    pub std: [f64; INPUT_DIM],
}

impl Default for Normalizer {
    fn default() -> Self {
        Normalizer {
            mean: [0.0; INPUT_DIM],
            std: [1.0; INPUT_DIM],
        }
    }
}

impl Normalizer {
    const MIN_STD: f64 = 1e-8;

    pub fn fit<'a>(frames: impl IntoIterator<Item = &'a ObservationFrame>) -> Result<Self> {
        let mut n = 0usize;
        let mut sum = [0.0; INPUT_DIM];
        let mut sq = [0.0; INPUT_DIM];
        for f in frames {
            for (i, v) in f.to_array().into_iter().enumerate() {
                sum[i] += v;
                sq[i] += v * v;
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::Invalid(
                "cannot fit normalizer on zero frames".into(),
            ));
        }
        let mut out = Normalizer::default();
        for i in 0..INPUT_DIM {
            let m = sum[i] / n as f64;
            out.mean[i] = m;
            out.std[i] = (sq[i] / n as f64 - m * m)
                .max(0.0)
                .sqrt()
                .max(Self::MIN_STD);
        }
        Ok(out)
    }

    pub fn normalize(&self, f: &[f64; INPUT_DIM]) -> [f64; INPUT_DIM] {
        std::array::from_fn(|i| (f[i] - self.mean[i]) / self.std[i])
    }

    /// Maps normalized motion outputs back to physical deltas.
    pub fn denormalize_motion(&self, m: &[f64]) -> [f64; OUTPUT_DIM] {
        std::array::from_fn(|i| m[i] * self.std[i] + self.mean[i])
    }
}

/// A trained model: configuration, weights and input normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct VrnnModel {
    pub hyper: HyperParams,
    pub params: VrnnParams,
    pub normalizer: Normalizer,
}

impl VrnnModel {
    pub fn new(hyper: HyperParams, params: VrnnParams, normalizer: Normalizer) -> Result<Self> {
        hyper.validate()?;
        params.check_shapes(&hyper)?;
        Ok(VrnnModel {
            hyper,
            params,
            normalizer,
        })
    }
}

/// A batch of equal-length windows, stored time-major: `inputs[t]` is a
/// `batch x 8` normalized observation matrix.
#[derive(Debug, Clone)]
pub struct SequenceBatch {
    pub inputs: Vec<Tensor>,
}

impl SequenceBatch {
    pub fn from_frames(windows: &[&[ObservationFrame]], normalizer: &Normalizer) -> Result<Self> {
        let len = windows.first().map_or(0, |w| w.len());
        if windows.is_empty() || windows.iter().any(|w| w.len() != len) {
            return Err(Error::Invalid(
                "batch windows must be non-empty and of equal length".into(),
            ));
        }
        let inputs = (0..len)
            .map(|t| {
                let mut data = Vec::with_capacity(windows.len() * INPUT_DIM);
                for w in windows {
                    data.extend(normalizer.normalize(&w[t].to_array()));
                }
                Tensor::new(windows.len(), INPUT_DIM, data)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SequenceBatch { inputs })
    }

    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, |t| t.rows())
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Loss terms of one forward pass; `total` lives on the graph.
#[derive(Debug, Clone)]
pub struct LossParts<N> {
    pub total: N,
    pub reconstruction: f64,
    pub kl: f64,
}

/// Sum over the window of squared reconstruction error plus
/// `kl_weight * KL(posterior || prior)`, averaged over the batch. The
/// hidden state starts at zero and every step reconstructs from a posterior
/// sample. `noise[t]` holds the standard-normal draws for step `t`.
pub fn elbo_loss<G: Graph>(
    g: &mut G,
    w: &VrnnWeights<G::Node>,
    batch: &SequenceBatch,
    noise: &[Tensor],
    hyper: &HyperParams,
) -> Result<LossParts<G::Node>> {
    if noise.len() < batch.len() {
        return Err(Error::Invalid(format!(
            "{} noise draws for {} steps",
            noise.len(),
            batch.len()
        )));
    }
    let b = batch.batch_size();
    let mut h = g.constant(Tensor::zeros(b, hyper.gru_hidden));
    let mut total: Option<G::Node> = None;
    let (mut rec_sum, mut kl_sum) = (0.0, 0.0);
    for (t, (x, eps)) in batch.inputs.iter().zip(noise).enumerate() {
        let x_node = g.constant(x.clone());
        let target = g.constant(x.slice_cols(0, OUTPUT_DIM)?);
        let eps = g.constant(eps.clone());
        let phi_x = model::embed_x(g, w, &x_node)?;
        let q = model::posterior(g, w, &h, &phi_x)?;
        let p = model::prior(g, w, &h)?;
        let z = model::reparameterize(g, &q, &eps)?;
        let phi_z = model::embed_z(g, w, &z)?;
        let recon = model::decode_embedded(g, w, &phi_z, &h)?;
        let err = g.sub(&recon, &target)?;
        let sq = g.square(&err);
        let rec = g.sum(&sq);
        let kl = model::kl_divergence(g, &q, &p)?;
        let (rv, kv) = (g.value(&rec).data()[0], g.value(&kl).data()[0]);
        if !rv.is_finite() || !kv.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss at step {t}: reconstruction {rv}, kl {kv}"
            )));
        }
        rec_sum += rv;
        kl_sum += kv;
        let weighted = g.scale(&kl, hyper.kl_weight);
        let step = g.add(&rec, &weighted)?;
        total = Some(match total {
            Some(acc) => g.add(&acc, &step)?,
            None => step,
        });
        h = model::recurrence(g, w, &h, &phi_z, &phi_x)?;
    }
    let total = total.ok_or_else(|| Error::Invalid("empty window".into()))?;
    let inv_b = 1.0 / b as f64;
    Ok(LossParts {
        total: g.scale(&total, inv_b),
        reconstruction: rec_sum * inv_b,
        kl: kl_sum * inv_b,
    })
}

/// Loss value without recording gradients.
pub fn elbo_loss_value(
    params: &VrnnParams,
    batch: &SequenceBatch,
    noise: &[Tensor],
    hyper: &HyperParams,
) -> Result<f64> {
    let mut g = Eval;
    let parts = elbo_loss(&mut g, params, batch, noise, hyper)?;
    parts.total.item()
}

#[cfg(test)]
mod tests;
