use std::path::Path;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::*;
use super::*;
use crate::datasets::{generate_maps, Window};
use crate::diffcore::{grad_check_many, Tape, Var};
use crate::world::{Pose2, Vec2};

fn tiny() -> HyperParams {
    HyperParams {
        history_len: 3,
        window_len: 5,
        latent_dim: 2,
        enc_hidden: 8,
        small_hidden: 8,
        gru_hidden: 8,
        batch_size: 4,
        epochs: 3,
        ..HyperParams::default()
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Tensor {
    Tensor::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
}

fn rand_params(h: &HyperParams, seed: u64) -> VrnnParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    expected_shapes(h).map(|_, &[r, c]| rand_tensor(&mut rng, r, c, 0.5))
}

fn rand_frames(rng: &mut ChaCha8Rng, n: usize) -> Vec<ObservationFrame> {
    (0..n)
        .map(|_| {
            let a: [f64; 8] = std::array::from_fn(|i| {
                rng.random_range(-1.0..1.0) * if i < 4 { 0.05 } else { 3.0 }
            });
            ObservationFrame::from_array(a)
        })
        .collect()
}

#[test]
fn zero_weights_give_standard_normals_and_halving_gru() {
    let h = tiny();
    let w = VrnnParams::zeros(&h);
    let mut g = Eval;
    let hid = Tensor::filled(2, h.gru_hidden, 0.8);
    let x = Tensor::filled(2, INPUT_DIM, 0.3);
    let phi_x = embed_x(&mut g, &w, &x).unwrap();
    let q = posterior(&mut g, &w, &hid, &phi_x).unwrap();
    let p = prior(&mut g, &w, &hid).unwrap();
    for t in [&q.mean, &q.log_var, &p.mean, &p.log_var] {
        assert!(t.data().iter().all(|&v| v == 0.0));
    }
    let z = Tensor::filled(2, h.latent_dim, 1.7);
    assert!(decode(&mut g, &w, &z, &hid)
        .unwrap()
        .data()
        .iter()
        .all(|&v| v == 0.0));
    let phi_z = embed_z(&mut g, &w, &z).unwrap();
    let next = recurrence(&mut g, &w, &hid, &phi_z, &phi_x).unwrap();
    assert!(next.data().iter().all(|&v| (v - 0.4).abs() < 1e-15));
}

fn hand_affine(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    (0..w.cols())
        .map(|j| {
            b.get(0, j)
                + x.iter()
                    .enumerate()
                    .map(|(i, xi)| xi * w.get(i, j))
                    .sum::<f64>()
        })
        .collect()
}

#[test]
fn mlp_matches_hand_loops() {
    let h = tiny();
    let w = rand_params(&h, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_tensor(&mut rng, 3, INPUT_DIM, 1.0);
    let got = embed_x(&mut Eval, &w, &x).unwrap();
    for r in 0..3 {
        let a: Vec<f64> = hand_affine(x.row_slice(r), &w.embed_x.l1.w, &w.embed_x.l1.b)
            .iter()
            .map(|v| v.tanh())
            .collect();
        let b: Vec<f64> = hand_affine(&a, &w.embed_x.l2.w, &w.embed_x.l2.b)
            .iter()
            .map(|v| v.tanh())
            .collect();
        for (g, e) in got.row_slice(r).iter().zip(&b) {
            assert!((g - e).abs() < 1e-12);
        }
    }
}

#[test]
fn gru_matches_hand_loops() {
    let h = tiny();
    let w = rand_params(&h, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = h.gru_hidden;
    let x = rand_tensor(&mut rng, 2, 2 * h.small_hidden, 1.0);
    let hp = rand_tensor(&mut rng, 2, n, 1.0);
    let got = gru_cell(&mut Eval, &w.gru, &x, &hp).unwrap();
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    for r in 0..2 {
        let gi = hand_affine(x.row_slice(r), &w.gru.w_in, &w.gru.b_in);
        let gh = hand_affine(hp.row_slice(r), &w.gru.w_hid, &w.gru.b_hid);
        for j in 0..n {
            let reset = sig(gi[j] + gh[j]);
            let update = sig(gi[n + j] + gh[n + j]);
            let cand = (gi[2 * n + j] + reset * gh[2 * n + j]).tanh();
            let want = (1.0 - update) * cand + update * hp.get(r, j);
            assert!((got.get(r, j) - want).abs() < 1e-12);
        }
    }
}

#[test]
fn reparameterized_samples_have_target_moments() {
    let n = 100_000;
    let p = GaussianParams {
        mean: Tensor::filled(n, 1, 1.5),
        log_var: Tensor::filled(n, 1, (0.49f64).ln()),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let noise = Tensor::from_fn(n, 1, |_, _| {
        rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)
    });
    let z = reparameterize(&mut Eval, &p, &noise).unwrap();
    let mean = z.data().iter().sum::<f64>() / n as f64;
    let var = z.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    assert!((mean - 1.5).abs() < 0.01, "{mean}");
    assert!((var - 0.49).abs() < 0.01, "{var}");
}

#[test]
fn kl_unit_shift_is_half_per_dim() {
    let q = GaussianParams {
        mean: Tensor::filled(1, 4, 1.0),
        log_var: Tensor::zeros(1, 4),
    };
    let p = GaussianParams {
        mean: Tensor::zeros(1, 4),
        log_var: Tensor::zeros(1, 4),
    };
    let kl = kl_divergence(&mut Eval, &q, &p).unwrap().item().unwrap();
    assert!((kl - 2.0).abs() < 1e-12);
    let same = kl_divergence(&mut Eval, &q, &q).unwrap().item().unwrap();
    assert!(same.abs() < 1e-12);
}

proptest! {
    #[test]
    fn kl_is_non_negative_and_matches_scalar_formula(
        mq in -3.0..3.0f64, lq in -4.0..4.0f64, mp in -3.0..3.0f64, lp in -4.0..4.0f64,
    ) {
        let q = GaussianParams { mean: Tensor::scalar(mq), log_var: Tensor::scalar(lq) };
        let p = GaussianParams { mean: Tensor::scalar(mp), log_var: Tensor::scalar(lp) };
        let kl = kl_divergence(&mut Eval, &q, &p).unwrap().item().unwrap();
        let (vq, vp) = (lq.exp(), lp.exp());
        let want = 0.5 * ((vp / vq).ln() + (vq + (mq - mp).powi(2)) / vp - 1.0);
        prop_assert!(kl >= -1e-12);
        prop_assert!((kl - want).abs() < 1e-9 * want.abs().max(1.0));
    }
}

#[test]
fn loss_is_zero_for_matching_posterior_and_perfect_reconstruction() {
    let h = tiny();
    let w = VrnnParams::zeros(&h);
    let frames: Vec<ObservationFrame> = (0..h.window_len)
        .map(|i| ObservationFrame {
            d_goal_ego: Vec2::new(i as f64, 1.0),
            ..Default::default()
        })
        .collect();
    let batch = SequenceBatch::from_frames(&[&frames, &frames], &Normalizer::default()).unwrap();
    let noise = vec![Tensor::filled(2, h.latent_dim, 0.7); h.window_len];
    let parts = elbo_loss(&mut Eval, &w, &batch, &noise, &h).unwrap();
    assert_eq!(parts.total.item().unwrap(), 0.0);
    assert_eq!((parts.reconstruction, parts.kl), (0.0, 0.0));
}

fn bind(vars: &[Var], h: &HyperParams) -> VrnnWeights<Var> {
    let mut i = 0;
    expected_shapes(h).map(|_, _| {
        i += 1;
        vars[i - 1]
    })
}

#[test]
fn full_loss_gradient_matches_finite_differences() {
    let h = tiny();
    let params = rand_params(&h, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let windows: Vec<Vec<ObservationFrame>> = (0..2)
        .map(|_| rand_frames(&mut rng, h.window_len))
        .collect();
    let refs: Vec<&[ObservationFrame]> = windows.iter().map(|w| w.as_slice()).collect();
    let batch = SequenceBatch::from_frames(&refs, &Normalizer::default()).unwrap();
    let noise: Vec<Tensor> = (0..h.window_len)
        .map(|_| rand_tensor(&mut rng, 2, h.latent_dim, 1.0))
        .collect();
    let points: Vec<Tensor> = params.named().into_iter().map(|(_, t)| t.clone()).collect();
    let err = grad_check_many(
        |tape: &mut Tape, vars: &[Var]| {
            Ok(elbo_loss(tape, &bind(vars, &h), &batch, &noise, &h)?.total)
        },
        &points,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn normalizer_round_trips_motion() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let frames = rand_frames(&mut rng, 200);
    let n = Normalizer::fit(&frames).unwrap();
    let x = frames[17].to_array();
    let back = n.denormalize_motion(&n.normalize(&x));
    for i in 0..OUTPUT_DIM {
        assert!((back[i] - x[i]).abs() < 1e-12);
    }
    let normed: Vec<[f64; 8]> = frames.iter().map(|f| n.normalize(&f.to_array())).collect();
    for d in 0..8 {
        let m = normed.iter().map(|v| v[d]).sum::<f64>() / 200.0;
        let v = normed.iter().map(|v| (v[d] - m).powi(2)).sum::<f64>() / 200.0;
        assert!(m.abs() < 1e-10 && (v - 1.0).abs() < 1e-10);
    }
    assert!(Normalizer::fit(&[]).is_err());
}

fn tiny_model(seed: u64) -> VrnnModel {
    let h = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = rand_frames(&mut rng, 50);
    VrnnModel::new(
        h.clone(),
        VrnnParams::init(&h, &mut rng),
        Normalizer::fit(&frames).unwrap(),
    )
    .unwrap()
}

#[test]
fn integrating_exact_deltas_recovers_poses() {
    let poses: Vec<Pose2> = (0..50)
        .map(|i| {
            Pose2::new(
                1.0 + 0.03 * i as f64,
                2.0 - 0.01 * i as f64,
                3.0 - 0.2 * i as f64,
            )
        })
        .collect();
    let deltas: Vec<[f64; 4]> = poses
        .windows(2)
        .map(|p| {
            [
                p[1].x - p[0].x,
                p[1].y - p[0].y,
                p[1].theta.cos() - p[0].theta.cos(),
                p[1].theta.sin() - p[0].theta.sin(),
            ]
        })
        .collect();
    let back = integrate_deltas(poses[0], &deltas).unwrap();
    for (a, b) in back.iter().zip(&poses) {
        assert!((a.x - b.x).abs() < 1e-12 && (a.y - b.y).abs() < 1e-12);
        assert!(crate::world::wrap_angle(a.theta - b.theta).abs() < 1e-12);
    }
    assert!(integrate_deltas(Pose2::new(0.0, 0.0, 0.0), &[[0.0, 0.0, -1.0, 0.0]]).is_err());
}

#[test]
fn rollouts_are_seeded_and_shaped() {
    let model = tiny_model(11);
    let maps = generate_maps();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let history = rand_frames(&mut rng, 7);
    let req = RolloutRequest {
        history: &history,
        start: maps[0].initial_pose,
        map: &maps[0],
        n_samples: 5,
        horizon: 9,
        seed: 4,
        temperature: 1.0,
    };
    let a = sample_rollout(&model, &req).unwrap();
    assert_eq!(a.deltas.len(), 5);
    assert!(a.deltas.iter().all(|d| d.len() == 9));
    assert!(a
        .poses
        .iter()
        .all(|p| p.len() == 10 && p[0] == maps[0].initial_pose));
    for (d, p) in a.deltas.iter().zip(&a.poses) {
        assert_eq!(&integrate_deltas(p[0], d).unwrap(), p);
    }
    assert_eq!(sample_rollout(&model, &req).unwrap(), a);
    assert_ne!(
        sample_rollout(
            &model,
            &RolloutRequest {
                seed: 5,
                ..req.clone()
            }
        )
        .unwrap(),
        a
    );
    assert_ne!(a.deltas[0], a.deltas[1]);

    let mean = sample_rollout(
        &model,
        &RolloutRequest {
            temperature: 0.0,
            ..req.clone()
        },
    )
    .unwrap();
    assert!(mean.deltas.iter().all(|d| *d == mean.deltas[0]));

    let short = RolloutRequest {
        history: &history[..2],
        ..req.clone()
    };
    assert!(matches!(
        sample_rollout(&model, &short),
        Err(Error::Invalid(_))
    ));
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let model = tiny_model(13);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    model.save(&path).unwrap();
    let back = VrnnModel::load(&path).unwrap();
    assert_eq!(back, model);

    let text = model.to_json().unwrap();
    let bumped = text.replacen("\"format_version\":1", "\"format_version\":2", 1);
    assert!(matches!(
        VrnnModel::from_json(&bumped, Path::new("m")),
        Err(Error::Version { found: 2, .. })
    ));
    let broken = text.replacen("\"gru.b_hid\"", "\"gru.b_typo\"", 1);
    let err = VrnnModel::from_json(&broken, Path::new("m")).unwrap_err();
    assert!(err.to_string().contains("gru.b_hid"), "{err}");
}

fn windows_from(frames: &[Vec<ObservationFrame>]) -> Vec<Window> {
    frames
        .iter()
        .enumerate()
        .map(|(i, f)| Window {
            traj_index: i,
            start: 0,
            frames: f.clone(),
        })
        .collect()
}

#[test]
fn training_is_deterministic_and_improves() {
    let h = HyperParams {
        epochs: 15,
        learning_rate: 3e-3,
        ..tiny()
    };
    // Smooth sequences with a learnable structure.
    let seqs: Vec<Vec<ObservationFrame>> = (0..12)
        .map(|k| {
            let v = 0.02 + 0.005 * (k % 4) as f64;
            (0..h.window_len)
                .map(|t| ObservationFrame {
                    dp: Vec2::new(v, 0.3 * v),
                    d_goal_ego: Vec2::new(8.0 - v * t as f64, 0.0),
                    ..Default::default()
                })
                .collect()
        })
        .collect();
    let (tr, va) = (windows_from(&seqs[..9]), windows_from(&seqs[9..]));
    let a = train(&tr, &va, &h).unwrap();
    let b = train(&tr, &va, &h).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.epochs.len(), 15);
    assert!(a.best_val_loss < a.initial_val_loss);
    assert_eq!(a.model.validation_loss(&va).unwrap(), a.best_val_loss);
    assert!(train(&[], &va, &h).is_err());
    let wrong = windows_from(&[seqs[0][..4].to_vec()]);
    assert!(train(&wrong, &va, &h).is_err());
}
