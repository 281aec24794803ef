use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::datasets::Window;
use crate::diffcore::{Graph, Tape, Tensor};
use crate::error::{Error, Result};
use crate::world::ObservationFrame;

use super::{
    elbo_loss, elbo_loss_value, HyperParams, Normalizer, SequenceBatch, VrnnModel, VrnnParams,
};

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean per-window training loss over the epoch.
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Parameters with the lowest validation loss seen (including the
    /// initialization).
    pub model: VrnnModel,
    pub initial_val_loss: f64,
    pub best_val_loss: f64,
    pub best_epoch: Option<usize>,
    pub epochs: Vec<EpochStats>,
}

struct Adam {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(params: &VrnnParams) -> Self {
        let zeros: Vec<Tensor> = params
            .named()
            .iter()
            .map(|(_, t)| Tensor::zeros(t.rows(), t.cols()))
            .collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let (pd, gd) = (p.data_mut(), g.data());
            for (((pi, &gi), mi), vi) in pd.iter_mut().zip(gd).zip(m.data_mut()).zip(v.data_mut()) {
                *mi = Self::BETA1 * *mi + (1.0 - Self::BETA1) * gi;
                *vi = Self::BETA2 * *vi + (1.0 - Self::BETA2) * gi * gi;
                *pi -= lr * (*mi / c1) / ((*vi / c2).sqrt() + Self::EPS);
            }
        }
    }
}

fn params_mut(p: &mut VrnnParams) -> Vec<&mut Tensor> {
    // Same order as `VrnnWeights::named`.
    let mut out: Vec<&mut Tensor> = Vec::new();
    let super::VrnnWeights {
        embed_x,
        embed_z,
        encoder,
        prior,
        decoder,
        decoder_out,
        gru,
    } = p;
    for m in [embed_x, embed_z] {
        out.extend([&mut m.l1.w, &mut m.l1.b, &mut m.l2.w, &mut m.l2.b]);
    }
    for g in [encoder, prior] {
        out.extend([
            &mut g.trunk.l1.w,
            &mut g.trunk.l1.b,
            &mut g.trunk.l2.w,
            &mut g.trunk.l2.b,
            &mut g.mean.w,
            &mut g.mean.b,
            &mut g.log_var.w,
            &mut g.log_var.b,
        ]);
    }
    out.extend([
        &mut decoder.l1.w,
        &mut decoder.l1.b,
        &mut decoder.l2.w,
        &mut decoder.l2.b,
    ]);
    out.extend([&mut decoder_out.w, &mut decoder_out.b]);
    out.extend([&mut gru.w_in, &mut gru.b_in, &mut gru.w_hid, &mut gru.b_hid]);
    out
}

fn draw_noise(rng: &mut ChaCha8Rng, steps: usize, batch: usize, latent: usize) -> Vec<Tensor> {
    (0..steps)
        .map(|_| Tensor::from_fn(batch, latent, |_, _| StandardNormal.sample(rng)))
        .collect()
}

fn frames_of<'a>(windows: &'a [Window], idx: &[usize]) -> Vec<&'a [ObservationFrame]> {
    idx.iter().map(|&i| windows[i].frames.as_slice()).collect()
}

/// Mean per-window loss over `windows` with noise fixed by `seed`.
pub(crate) fn dataset_loss(model: &VrnnModel, windows: &[Window], seed: u64) -> Result<f64> {
    let h = &model.hyper;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let idx: Vec<usize> = (0..windows.len()).collect();
    for chunk in idx.chunks(h.batch_size.max(1)) {
        let batch = SequenceBatch::from_frames(&frames_of(windows, chunk), &model.normalizer)?;
        let noise = draw_noise(&mut rng, batch.len(), chunk.len(), h.latent_dim);
        total += elbo_loss_value(&model.params, &batch, &noise, h)? * chunk.len() as f64;
    }
    Ok(total / windows.len() as f64)
}

const VALIDATION_SEED_OFFSET: u64 = 0x5eed_0001;

impl VrnnModel {
    /// Mean per-window validation loss with the noise stream used during
    /// training, so saved and reloaded checkpoints report the same value.
    pub fn validation_loss(&self, windows: &[Window]) -> Result<f64> {
        dataset_loss(self, windows, self.hyper.seed ^ VALIDATION_SEED_OFFSET)
    }
}

pub fn train(train: &[Window], val: &[Window], hyper: &HyperParams) -> Result<TrainReport> {
    train_with_progress(train, val, hyper, |_| {})
}

/// Minibatch Adam on the per-window loss; deterministic given `hyper.seed`.
pub fn train_with_progress(
    train: &[Window],
    val: &[Window],
    hyper: &HyperParams,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainReport> {
    hyper.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Invalid(format!(
            "training needs non-empty splits (train {}, validation {})",
            train.len(),
            val.len()
        )));
    }
    if let Some(w) = train
        .iter()
        .chain(val)
        .find(|w| w.frames.len() != hyper.window_len)
    {
        return Err(Error::Invalid(format!(
            "window from trajectory {} has {} frames, expected {}",
            w.traj_index,
            w.frames.len(),
            hyper.window_len
        )));
    }

    let normalizer = Normalizer::fit(train.iter().flat_map(|w| w.frames.iter()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let params = VrnnParams::init(hyper, &mut rng);
    let mut model = VrnnModel::new(hyper.clone(), params, normalizer)?;

    let initial_val_loss = model.validation_loss(val)?;
    let mut best = (initial_val_loss, model.params.clone(), None);
    let mut adam = Adam::new(&model.params);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::with_capacity(hyper.epochs);

    for epoch in 0..hyper.epochs {
        let started = std::time::Instant::now();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(hyper.batch_size) {
            let batch = SequenceBatch::from_frames(&frames_of(train, chunk), &model.normalizer)?;
            let noise = draw_noise(&mut rng, batch.len(), chunk.len(), hyper.latent_dim);

            let mut tape = Tape::new();
            let bound = model.params.map(|_, t| tape.leaf(t.clone()));
            let parts = elbo_loss(&mut tape, &bound, &batch, &noise, hyper)?;
            let loss = tape.value(&parts.total).data()[0];
            let grads = tape.backward(parts.total)?;
            let mut flat: Vec<Tensor> = bound
                .named()
                .iter()
                .map(|(_, v)| grads.get_or_zeros(**v, tape.get(**v).shape()))
                .collect();
            drop(tape);

            if hyper.grad_clip > 0.0 {
                let norm = flat
                    .iter()
                    .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
                    .sum::<f64>()
                    .sqrt();
                if !norm.is_finite() {
                    return Err(Error::NonFinite(format!("gradient norm in epoch {epoch}")));
                }
                if norm > hyper.grad_clip {
                    let s = hyper.grad_clip / norm;
                    flat = flat.into_iter().map(|g| g.scale(s)).collect();
                }
            }
            adam.update(
                &mut params_mut(&mut model.params),
                &flat,
                hyper.learning_rate,
            );
            epoch_loss += loss * chunk.len() as f64;
        }

        let val_loss = model.validation_loss(val)?;
        if val_loss < best.0 {
            best = (val_loss, model.params.clone(), Some(epoch));
        }
        let stats = EpochStats {
            epoch,
            train_loss: epoch_loss / train.len() as f64,
            val_loss,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&stats);
        epochs.push(stats);
    }

    model.params = best.1;
    Ok(TrainReport {
        model,
        initial_val_loss,
        best_val_loss: best.0,
        best_epoch: best.2,
        epochs,
    })
}
