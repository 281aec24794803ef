//! Forward pieces of the recurrent latent-variable model. Every function is
//! generic over [`Graph`], so the same code is recorded for training and
//! evaluated directly for sampling.

use crate::diffcore::{Graph, Tensor};
use crate::error::Result;

use super::params::{GaussianHead, GruCell, Linear, Mlp2, VrnnWeights};

pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

/// Diagonal Gaussian over the latent, one row per batch element.
#[derive(Debug, Clone)]
pub struct GaussianParams<N> {
    pub mean: N,
    pub log_var: N,
}

pub fn linear<G: Graph>(g: &mut G, l: &Linear<G::Node>, x: &G::Node) -> Result<G::Node> {
    g.affine(x, &l.w, &l.b)
}

pub fn mlp2<G: Graph>(g: &mut G, m: &Mlp2<G::Node>, x: &G::Node) -> Result<G::Node> {
    let a = linear(g, &m.l1, x)?;
    let a = g.tanh(&a);
    let b = linear(g, &m.l2, &a)?;
    Ok(g.tanh(&b))
}

fn gaussian<G: Graph>(
    g: &mut G,
    head: &GaussianHead<G::Node>,
    x: &G::Node,
) -> Result<GaussianParams<G::Node>> {
    let t = mlp2(g, &head.trunk, x)?;
    let mean = linear(g, &head.mean, &t)?;
    let lv = linear(g, &head.log_var, &t)?;
    Ok(GaussianParams {
        mean,
        log_var: g.clamp(&lv, LOG_VAR_MIN, LOG_VAR_MAX),
    })
}

pub fn embed_x<G: Graph>(g: &mut G, w: &VrnnWeights<G::Node>, x: &G::Node) -> Result<G::Node> {
    mlp2(g, &w.embed_x, x)
}

pub fn embed_z<G: Graph>(g: &mut G, w: &VrnnWeights<G::Node>, z: &G::Node) -> Result<G::Node> {
    mlp2(g, &w.embed_z, z)
}

/// Approximate posterior from the previous hidden state and the embedded
/// current observation.
pub fn posterior<G: Graph>(
    g: &mut G,
    w: &VrnnWeights<G::Node>,
    h_prev: &G::Node,
    phi_x: &G::Node,
) -> Result<GaussianParams<G::Node>> {
    let inp = g.concat(&[h_prev, phi_x])?;
    gaussian(g, &w.encoder, &inp)
}

pub fn prior<G: Graph>(
    g: &mut G,
    w: &VrnnWeights<G::Node>,
    h_prev: &G::Node,
) -> Result<GaussianParams<G::Node>> {
    gaussian(g, &w.prior, h_prev)
}

/// z = mean + exp(log_var / 2) * noise
pub fn reparameterize<G: Graph>(
    g: &mut G,
    p: &GaussianParams<G::Node>,
    noise: &G::Node,
) -> Result<G::Node> {
    let half = g.scale(&p.log_var, 0.5);
    let std = g.exp(&half);
    let spread = g.mul(&std, noise)?;
    g.add(&p.mean, &spread)
}

/// Decoder on an already embedded latent.
pub fn decode_embedded<G: Graph>(
    g: &mut G,
    w: &VrnnWeights<G::Node>,
    phi_z: &G::Node,
    h_prev: &G::Node,
) -> Result<G::Node> {
    let inp = g.concat(&[phi_z, h_prev])?;
    let t = mlp2(g, &w.decoder, &inp)?;
    linear(g, &w.decoder_out, &t)
}

/// Predicted (dx, dy, dcos, dsin) for latent `z`, in normalized units.
pub fn decode<G: Graph>(
    g: &mut G,
    w: &VrnnWeights<G::Node>,
    z: &G::Node,
    h_prev: &G::Node,
) -> Result<G::Node> {
    let phi_z = embed_z(g, w, z)?;
    decode_embedded(g, w, &phi_z, h_prev)
}

/// GRU update on input [embedded latent | embedded observation].
pub fn recurrence<G: Graph>(
    g: &mut G,
    w: &VrnnWeights<G::Node>,
    h_prev: &G::Node,
    phi_z: &G::Node,
    phi_x: &G::Node,
) -> Result<G::Node> {
    let inp = g.concat(&[phi_z, phi_x])?;
    gru_cell(g, &w.gru, &inp, h_prev)
}

pub fn gru_cell<G: Graph>(
    g: &mut G,
    cell: &GruCell<G::Node>,
    x: &G::Node,
    h: &G::Node,
) -> Result<G::Node> {
    let hidden = g.value(h).cols();
    let gi = g.affine(x, &cell.w_in, &cell.b_in)?;
    let gh = g.affine(h, &cell.w_hid, &cell.b_hid)?;
    let (gi_r, gh_r) = (g.slice(&gi, 0, hidden)?, g.slice(&gh, 0, hidden)?);
    let (gi_u, gh_u) = (
        g.slice(&gi, hidden, 2 * hidden)?,
        g.slice(&gh, hidden, 2 * hidden)?,
    );
    let (gi_n, gh_n) = (
        g.slice(&gi, 2 * hidden, 3 * hidden)?,
        g.slice(&gh, 2 * hidden, 3 * hidden)?,
    );
    let r = g.add(&gi_r, &gh_r)?;
    let reset = g.sigmoid(&r);
    let u = g.add(&gi_u, &gh_u)?;
    let update = g.sigmoid(&u);
    let gated = g.mul(&reset, &gh_n)?;
    let n = g.add(&gi_n, &gated)?;
    let candidate = g.tanh(&n);
    // h' = candidate + update * (h - candidate)
    let diff = g.sub(h, &candidate)?;
    let keep = g.mul(&update, &diff)?;
    g.add(&candidate, &keep)
}

/// Closed-form KL(q || p) between diagonal Gaussians, summed over latent
/// dimensions and batch rows.
pub fn kl_divergence<G: Graph>(
    g: &mut G,
    q: &GaussianParams<G::Node>,
    p: &GaussianParams<G::Node>,
) -> Result<G::Node> {
    let n = g.value(&q.mean).len() as f64;
    let d = g.sub(&p.log_var, &q.log_var)?;
    let neg_d = g.scale(&d, -1.0);
    let ratio = g.exp(&neg_d);
    let diff = g.sub(&q.mean, &p.mean)?;
    let sq = g.square(&diff);
    let neg_lvp = g.scale(&p.log_var, -1.0);
    let inv_var = g.exp(&neg_lvp);
    let maha = g.mul(&sq, &inv_var)?;
    let s1 = g.sum(&d);
    let s2 = g.sum(&ratio);
    let s3 = g.sum(&maha);
    let a = g.add(&s1, &s2)?;
    let b = g.add(&a, &s3)?;
    let minus_n = g.constant(Tensor::scalar(-n));
    let c = g.add(&b, &minus_n)?;
    Ok(g.scale(&c, 0.5))
}
