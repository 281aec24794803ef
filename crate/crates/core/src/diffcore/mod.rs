//! A small reverse-mode automatic differentiation engine over dense f64
//! matrices: enough primitives to unroll and train a recurrent model.

mod graph;
mod tape;
mod tensor;

pub use graph::{Eval, Graph};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{sigmoid, Tensor};

use crate::error::Result;

/// Relative difference with the denominator floored at 1e-8.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of a scalar function of several inputs
/// against central finite differences and returns the largest relative error.
pub fn grad_check_many<F>(f: F, points: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(points)
        .map(|(v, p)| grads.get_or_zeros(*v, p.shape()))
        .collect();

    let eval = |pts: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = pts.iter().map(|p| tape.constant(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.get(out).item()
    };

    let mut worst = 0.0f64;
    let mut probe: Vec<Tensor> = points.to_vec();
    for (k, p) in points.iter().enumerate() {
        for i in 0..p.len() {
            let x0 = p.data()[i];
            probe[k].data_mut()[i] = x0 + eps;
            let up = eval(&probe)?;
            probe[k].data_mut()[i] = x0 - eps;
            let down = eval(&probe)?;
            probe[k].data_mut()[i] = x0;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(relative_error(analytic[k].data()[i], numeric));
        }
    }
    Ok(worst)
}

/// Single-input form of [`grad_check_many`].
pub fn grad_check<F>(f: F, point: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_many(
        |tape, vars| f(tape, vars[0]),
        std::slice::from_ref(point),
        eps,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
        Tensor::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
    }

    #[test]
    fn closed_form_examples() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::scalar(0.0));
        let s = tape.sigmoid(&z);
        assert_eq!(tape.get(s).item().unwrap(), 0.5);

        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = tape.square(&x);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item().unwrap(), 6.0);
    }

    #[test]
    fn detached_branch_has_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(&[1.0, 2.0]));
        let d = tape.detach(x);
        let sq = tape.square(&d);
        let y = tape.sum(&sq);
        let g = tape.backward(y).unwrap();
        assert!(g.get(x).is_none());
        assert_eq!(g.get_or_zeros(x, [1, 2]), Tensor::zeros(1, 2));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(&[1.0, 2.0]));
        assert!(matches!(
            tape.backward(x),
            Err(Error::Shape { op: "backward", .. })
        ));
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(2, 3));
        let b = tape.leaf(Tensor::zeros(2, 3));
        let err = tape.matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
        let c = tape.leaf(Tensor::zeros(3, 2));
        assert!(matches!(
            tape.mul(&a, &c),
            Err(Error::Shape { op: "mul", .. })
        ));
    }

    #[test]
    fn sum_sigmoid_wx_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random(&mut rng, 4, 3, -1.0, 1.0);
        let x = random(&mut rng, 3, 2, -1.0, 1.0);
        let err = grad_check_many(
            |t, v| {
                let wx = t.matmul(&v[0], &v[1])?;
                let s = t.sigmoid(&wx);
                Ok(t.sum(&s))
            },
            &[w, x],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn linear_function_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random(&mut rng, 3, 4, -2.0, 2.0);
        let c = random(&mut rng, 3, 4, -2.0, 2.0);
        let err = grad_check(
            |t, x| {
                let k = t.constant(c.clone());
                let m = t.mul(&x, &k)?;
                let s = t.scale(&m, 0.5);
                Ok(t.sum(&s))
            },
            &p,
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn wrong_hand_coded_gradient_is_caught() {
        let p = Tensor::row(&[0.3, -1.2, 2.0]);
        let err = grad_check(
            |t, x| {
                let y = t.map(x, f64::sin, |v| 1.5 * v.cos());
                Ok(t.sum(&y))
            },
            &p,
            1e-6,
        )
        .unwrap();
        assert!(err > 0.1, "{err}");
    }

    #[test]
    fn backward_is_repeatable() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut tape = Tape::new();
        let a = tape.leaf(random(&mut rng, 3, 3, -1.0, 1.0));
        let b = tape.leaf(random(&mut rng, 3, 3, -1.0, 1.0));
        let m = tape.matmul(&a, &b).unwrap();
        let t = tape.tanh(&m);
        let q = tape.mul(&t, &a).unwrap();
        let l = tape.sum(&q);
        let g1 = tape.backward(l).unwrap();
        let g2 = tape.backward(l).unwrap();
        assert_eq!(g1.get(a), g2.get(a));
        assert_eq!(g1.get(b), g2.get(b));
    }

    #[test]
    fn chain_matches_closed_form() {
        // f(x) = log(1 + exp(tanh(x)^2)) at several points
        for &x0 in &[-1.3, -0.2, 0.0, 0.4, 2.2] {
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::scalar(x0));
            let th = tape.tanh(&x);
            let sq = tape.square(&th);
            let e = tape.exp(&sq);
            let one = tape.constant(Tensor::scalar(1.0));
            let s = tape.add(&e, &one).unwrap();
            let y = tape.log(&s);
            let g = tape.backward(y).unwrap().get(x).unwrap().item().unwrap();
            let t = x0.tanh();
            let want = (t * t).exp() / (1.0 + (t * t).exp()) * 2.0 * t * (1.0 - t * t);
            assert!((g - want).abs() < 1e-10, "{g} vs {want}");
        }
    }

    /// Applies primitive `which` to random inputs and reduces with a random
    /// weighting so every output element contributes a distinct gradient.
    fn primitive_loss(which: usize, t: &mut Tape, v: &[Var], weights: &Tensor) -> Result<Var> {
        let out = match which {
            0 => t.matmul(&v[0], &v[1])?,
            1 => t.add(&v[0], &v[2])?,
            2 => t.mul(&v[0], &v[2])?,
            3 => t.concat(&[&v[0], &v[2]])?,
            4 => t.slice(&v[0], 1, 2)?,
            5 => t.tanh(&v[0]),
            6 => t.sigmoid(&v[0]),
            7 => t.exp(&v[0]),
            8 => {
                let sq = t.square(&v[0]);
                let one = t.constant(Tensor::filled(1, 1, 0.5));
                let sum = t.sum(&sq);
                let shifted = t.add(&sum, &one)?;
                t.log(&shifted)
            }
            9 => t.square(&v[0]),
            10 => t.sub(&v[0], &v[2])?,
            11 => t.add(&v[0], &v[3])?,
            12 => t.clamp(&v[0], -0.5, 0.5),
            _ => t.sum(&v[0]),
        };
        let shape = t.get(out).shape();
        let w = t.constant(Tensor::from_fn(shape[0], shape[1], |r, c| {
            weights.get(r % weights.rows(), c % weights.cols())
        }));
        let weighted = t.mul(&out, &w)?;
        Ok(t.sum(&weighted))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn every_primitive_passes_grad_check(seed in 0u64..1_000_000, rows in 1usize..5, cols in 2usize..5, inner in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random(&mut rng, rows, cols, -1.5, 1.5);
            let b = random(&mut rng, cols, inner, -1.5, 1.5);
            let c = random(&mut rng, rows, cols, -1.5, 1.5);
            let row = random(&mut rng, 1, cols, -1.5, 1.5);
            let weights = random(&mut rng, 4, 5, 0.5, 1.5);
            // keep clamp inputs away from the kinks
            let a_clamp = a.map(|x| if (x.abs() - 0.5).abs() < 1e-3 { x + 0.01 } else { x });
            for which in 0..14 {
                let inputs = [if which == 12 { a_clamp.clone() } else { a.clone() }, b.clone(), c.clone(), row.clone()];
                let err = grad_check_many(|t, v| primitive_loss(which, t, v, &weights), &inputs, 1e-6).unwrap();
                prop_assert!(err < 1e-5, "primitive {which}: {err}");
            }
        }
    }
}
