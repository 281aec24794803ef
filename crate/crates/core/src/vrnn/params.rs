use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Model shape and training configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    /// Observed steps before prediction starts.
    pub history_len: usize,
    /// Total window length (history plus prediction).
    pub window_len: usize,
    pub latent_dim: usize,
    /// Hidden width of the posterior encoder and the decoder.
    pub enc_hidden: usize,
    /// Hidden width of the embeddings and the prior network.
    pub small_hidden: usize,
    pub gru_hidden: usize,
    pub kl_weight: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Global gradient-norm clip; non-positive disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            history_len: 30,
            window_len: 120,
            latent_dim: 6,
            enc_hidden: 128,
            small_hidden: 64,
            gru_hidden: 64,
            kl_weight: 1.0,
            learning_rate: 3e-4,
            batch_size: 32,
            epochs: 50,
            grad_clip: 10.0,
            seed: 0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.history_len == 0 || self.history_len >= self.window_len {
            return Err(Error::Invalid(format!(
                "history length {} must be positive and below window length {}",
                self.history_len, self.window_len
            )));
        }
        if [
            self.latent_dim,
            self.enc_hidden,
            self.small_hidden,
            self.gru_hidden,
            self.batch_size,
        ]
        .contains(&0)
        {
            return Err(Error::Invalid(
                "layer sizes and batch size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.kl_weight >= 0.0) {
            return Err(Error::Invalid(
                "learning rate must be positive and kl weight non-negative".into(),
            ));
        }
        Ok(())
    }
}

pub const INPUT_DIM: usize = 8;
pub const OUTPUT_DIM: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<P> {
    pub w: P,
    pub b: P,
}

/// Two hidden layers with tanh activations.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp2<P> {
    pub l1: Linear<P>,
    pub l2: Linear<P>,
}

/// Hidden trunk followed by mean and log-variance heads.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHead<P> {
    pub trunk: Mlp2<P>,
    pub mean: Linear<P>,
    pub log_var: Linear<P>,
}

/// Gate weights are stored fused as [reset | update | candidate].
#[derive(Debug, Clone, PartialEq)]
pub struct GruCell<P> {
    pub w_in: P,
    pub b_in: P,
    pub w_hid: P,
    pub b_hid: P,
}

/// All learnable weights, generic over the handle type so the same layout
/// serves plain tensors and tape variables.
#[derive(Debug, Clone, PartialEq)]
pub struct VrnnWeights<P> {
    pub embed_x: Mlp2<P>,
    pub embed_z: Mlp2<P>,
    pub encoder: GaussianHead<P>,
    pub prior: GaussianHead<P>,
    pub decoder: Mlp2<P>,
    pub decoder_out: Linear<P>,
    pub gru: GruCell<P>,
}

pub type VrnnParams = VrnnWeights<Tensor>;

impl<P> Linear<P> {
    fn map<Q>(&self, f: &mut impl FnMut(&str, &P) -> Q, name: &str) -> Linear<Q> {
        Linear {
            w: f(&format!("{name}.w"), &self.w),
            b: f(&format!("{name}.b"), &self.b),
        }
    }
    fn visit<'a>(&'a self, out: &mut Vec<(String, &'a P)>, name: &str) {
        out.push((format!("{name}.w"), &self.w));
        out.push((format!("{name}.b"), &self.b));
    }
}

impl<P> Mlp2<P> {
    fn map<Q>(&self, f: &mut impl FnMut(&str, &P) -> Q, name: &str) -> Mlp2<Q> {
        Mlp2 {
            l1: self.l1.map(f, &format!("{name}.l1")),
            l2: self.l2.map(f, &format!("{name}.l2")),
        }
    }
    fn visit<'a>(&'a self, out: &mut Vec<(String, &'a P)>, name: &str) {
        self.l1.visit(out, &format!("{name}.l1"));
        self.l2.visit(out, &format!("{name}.l2"));
    }
}

impl<P> GaussianHead<P> {
    fn map<Q>(&self, f: &mut impl FnMut(&str, &P) -> Q, name: &str) -> GaussianHead<Q> {
        GaussianHead {
            trunk: self.trunk.map(f, &format!("{name}.trunk")),
            mean: self.mean.map(f, &format!("{name}.mean")),
            log_var: self.log_var.map(f, &format!("{name}.log_var")),
        }
    }
    fn visit<'a>(&'a self, out: &mut Vec<(String, &'a P)>, name: &str) {
        self.trunk.visit(out, &format!("{name}.trunk"));
        self.mean.visit(out, &format!("{name}.mean"));
        self.log_var.visit(out, &format!("{name}.log_var"));
    }
}

impl<P> GruCell<P> {
    fn map<Q>(&self, f: &mut impl FnMut(&str, &P) -> Q, name: &str) -> GruCell<Q> {
        GruCell {
            w_in: f(&format!("{name}.w_in"), &self.w_in),
            b_in: f(&format!("{name}.b_in"), &self.b_in),
            w_hid: f(&format!("{name}.w_hid"), &self.w_hid),
            b_hid: f(&format!("{name}.b_hid"), &self.b_hid),
        }
    }
    fn visit<'a>(&'a self, out: &mut Vec<(String, &'a P)>, name: &str) {
        out.push((format!("{name}.w_in"), &self.w_in));
        out.push((format!("{name}.b_in"), &self.b_in));
        out.push((format!("{name}.w_hid"), &self.w_hid));
        out.push((format!("{name}.b_hid"), &self.b_hid));
    }
}

impl<P> VrnnWeights<P> {
    /// Maps every parameter, passing its stable dotted name.
    pub fn map<Q>(&self, mut f: impl FnMut(&str, &P) -> Q) -> VrnnWeights<Q> {
        VrnnWeights {
            embed_x: self.embed_x.map(&mut f, "embed_x"),
            embed_z: self.embed_z.map(&mut f, "embed_z"),
            encoder: self.encoder.map(&mut f, "encoder"),
            prior: self.prior.map(&mut f, "prior"),
            decoder: self.decoder.map(&mut f, "decoder"),
            decoder_out: self.decoder_out.map(&mut f, "decoder_out"),
            gru: self.gru.map(&mut f, "gru"),
        }
    }

    /// Parameters in a fixed order with their names.
    pub fn named(&self) -> Vec<(String, &P)> {
        let mut out = Vec::new();
        self.embed_x.visit(&mut out, "embed_x");
        self.embed_z.visit(&mut out, "embed_z");
        self.encoder.visit(&mut out, "encoder");
        self.prior.visit(&mut out, "prior");
        self.decoder.visit(&mut out, "decoder");
        self.decoder_out.visit(&mut out, "decoder_out");
        self.gru.visit(&mut out, "gru");
        out
    }
}

/// Expected `[rows, cols]` of every parameter for the given sizes, in
/// [`VrnnWeights::named`] order.
pub fn expected_shapes(h: &HyperParams) -> VrnnWeights<[usize; 2]> {
    let lin = |i: usize, o: usize| Linear {
        w: [i, o],
        b: [1, o],
    };
    let mlp = |i: usize, hid: usize| Mlp2 {
        l1: lin(i, hid),
        l2: lin(hid, hid),
    };
    let (s, e, g, z) = (h.small_hidden, h.enc_hidden, h.gru_hidden, h.latent_dim);
    VrnnWeights {
        embed_x: mlp(INPUT_DIM, s),
        embed_z: mlp(z, s),
        encoder: GaussianHead {
            trunk: mlp(g + s, e),
            mean: lin(e, z),
            log_var: lin(e, z),
        },
        prior: GaussianHead {
            trunk: mlp(g, s),
            mean: lin(s, z),
            log_var: lin(s, z),
        },
        decoder: mlp(s + g, e),
        decoder_out: lin(e, OUTPUT_DIM),
        gru: GruCell {
            w_in: [2 * s, 3 * g],
            b_in: [1, 3 * g],
            w_hid: [g, 3 * g],
            b_hid: [1, 3 * g],
        },
    }
}

impl VrnnParams {
    /// Scaled-normal initialization (std = 1/sqrt(fan_in)), zero biases.
    pub fn init(h: &HyperParams, rng: &mut impl Rng) -> Self {
        expected_shapes(h).map(|name, &[r, c]| {
            if name.ends_with(".w") || name.ends_with(".w_in") || name.ends_with(".w_hid") {
                let normal = Normal::new(0.0, 1.0 / (r as f64).sqrt()).expect("positive std");
                Tensor::from_fn(r, c, |_, _| normal.sample(rng))
            } else {
                Tensor::zeros(r, c)
            }
        })
    }

    pub fn zeros(h: &HyperParams) -> Self {
        expected_shapes(h).map(|_, &[r, c]| Tensor::zeros(r, c))
    }

    pub fn check_shapes(&self, h: &HyperParams) -> Result<()> {
        let want = expected_shapes(h);
        for ((name, t), (_, shape)) in self.named().into_iter().zip(want.named()) {
            if t.shape() != *shape {
                return Err(Error::shape(
                    "vrnn parameters",
                    format!("{name} is {:?}, expected {shape:?}", t.shape()),
                ));
            }
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.is_finite())
    }
}
