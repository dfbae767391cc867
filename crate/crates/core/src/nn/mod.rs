//! Minimal differentiable substrate: dense layers, activations, losses,
//! gradient reversal, Adam and a finite-difference gradient checker.

mod adam;
mod gradcheck;
mod layers;
mod params;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradEntry, GradReport, REL_FLOOR};
pub use layers::{dense_forward, DenseLayer, Mlp};
pub use params::{glorot_uniform, Matrix, ParamId, ParamStore};
pub use tape::{bce, bce_logits, mse, sigmoid, Activation, Bandwidth, Gradients, Tape, Var, BCE_CLAMP};

/// Elementwise ReLU or sigmoid without a tape.
pub fn activate(kind: Activation, input: &Matrix) -> Matrix {
    match kind {
        Activation::Relu => input.mapv(|v| if v > 0.0 { v } else { 0.0 }),
        Activation::Sigmoid => input.mapv(sigmoid),
        Activation::Identity => input.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_shape_simple_fn((r, c), || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn relu_and_sigmoid_values() {
        assert_eq!(
            activate(Activation::Relu, &array![[-1.0, 0.0, 2.0]]),
            array![[0.0, 0.0, 2.0]]
        );
        assert_eq!(activate(Activation::Sigmoid, &array![[0.0]]), array![[0.5]]);
    }

    #[test]
    fn loss_values() {
        let x = array![[0.3, -2.0], [1.0, 4.0]];
        assert_eq!(mse(&x, &x), 0.0);
        assert!((bce(&array![[0.5]], &array![[1.0]]) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn bce_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = Matrix::from_shape_simple_fn((7, 3), || rng.random_range(0.01..0.99));
        let t = Matrix::from_shape_simple_fn((7, 3), || f64::from(rng.random_bool(0.5)));
        let mut sum = 0.0;
        for i in 0..7 {
            for j in 0..3 {
                let (pv, tv) = (p[[i, j]], t[[i, j]]);
                sum += if tv == 1.0 { -pv.ln() } else { -(1.0 - pv).ln() };
            }
        }
        assert!((bce(&p, &t) - sum / 21.0).abs() < 1e-12);
    }

    #[test]
    fn bce_clamps_extremes() {
        let v = bce(&array![[0.0, 1.0]], &array![[1.0, 0.0]]);
        assert!(v.is_finite());
        assert!((v + (1e-7f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn mse_shape_mismatch_errors() {
        let mut tape = Tape::new();
        let p = tape.constant(Matrix::zeros((2, 3)));
        assert!(tape.mse(p, Arc::new(Matrix::zeros((3, 2)))).is_err());
    }

    #[test]
    fn reversal_forward_is_identity_and_backward_negates() {
        let mut tape = Tape::new();
        let x = tape.input(array![[1.0, 2.0, 3.0]]);
        let r = tape.reverse_gradient(x, 1.0).unwrap();
        assert_eq!(tape.value(r), &array![[1.0, 2.0, 3.0]]);
        // loss = mean(r²)/… ; upstream gradient at r is 2r/3
        let loss = tape.mse(r, Arc::new(Matrix::zeros((1, 3)))).unwrap();
        let g = tape.backward(loss).unwrap();
        let upstream = array![[2.0, 4.0, 6.0]] / 3.0;
        assert_eq!(g.wrt(x).unwrap(), &(-upstream));
    }

    #[test]
    fn reversal_rejects_negative_lambda() {
        let mut tape = Tape::new();
        let x = tape.input(array![[1.0]]);
        assert!(tape.reverse_gradient(x, -0.5).is_err());
    }

    #[test]
    fn composite_loss_through_reversal_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut store = ParamStore::new();
        let enc = Mlp::init(
            &mut store,
            &mut rng,
            "enc",
            &[5, 6, 4],
            Activation::Relu,
            Activation::Sigmoid,
        );
        let disc = Mlp::init(
            &mut store,
            &mut rng,
            "disc",
            &[4, 3, 1],
            Activation::Sigmoid,
            Activation::Sigmoid,
        );
        let x = random(&mut rng, 8, 5);
        let recon = Arc::new(random(&mut rng, 8, 4));
        let domains = Arc::new(Matrix::from_shape_fn((8, 1), |(i, _)| (i % 2) as f64));
        let report = grad_check(
            &mut store,
            |s, tape| {
                let input = tape.constant(x.clone());
                let h = enc.forward(s, tape, input)?;
                let rec = tape.mse(h, recon.clone())?;
                let r = tape.reverse_gradient(h, 0.7)?;
                let d = disc.forward(s, tape, r)?;
                let adv = tape.bce(d, domains.clone())?;
                tape.weighted_sum(&[(rec, 1.0), (adv, 1.0)])
            },
            GradCheckOptions::exhaustive(1e-4),
        )
        .unwrap();
        assert!(!report.entries.is_empty());
        assert!(report.passed(), "max rel err {}", report.max_rel_error());
    }

    #[test]
    fn mmd_and_ortho_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut store = ParamStore::new();
        let xs = store.push("x", random(&mut rng, 5, 3));
        let ys = store.push("y", random(&mut rng, 4, 3));
        let ps = store.push("p", random(&mut rng, 5, 3));
        let report = grad_check(
            &mut store,
            |s, tape| {
                let x = tape.param(s, xs);
                let y = tape.param(s, ys);
                let p = tape.param(s, ps);
                let mmd = tape.mmd_sq(x, y, Bandwidth::Median)?;
                let fixed = tape.mmd_sq(x, y, Bandwidth::Fixed(0.8))?;
                let ortho = tape.ortho(x, p)?;
                tape.weighted_sum(&[(mmd, 1.0), (fixed, 0.5), (ortho, 2.0)])
            },
            GradCheckOptions::exhaustive(1e-4),
        )
        .unwrap();
        assert_eq!(report.entries.len(), 15 + 12 + 15);
        assert!(report.passed(), "max rel err {}", report.max_rel_error());
    }

    #[test]
    fn single_use_params_are_deduplicated_on_tape() {
        let mut store = ParamStore::new();
        let id = store.push("w", array![[2.0]]);
        let mut tape = Tape::new();
        let a = tape.param(&store, id);
        let b = tape.param(&store, id);
        assert_eq!(a, b);
        let sum = tape.add(a, b).unwrap();
        let loss = tape.mse(sum, Arc::new(array![[0.0]])).unwrap();
        // d/dw (2w)² = 8w = 16
        assert_eq!(tape.backward(loss).unwrap().param(id).unwrap()[[0, 0]], 16.0);
    }

    proptest! {
        #[test]
        fn sigmoid_is_symmetric(x in -30.0f64..30.0) {
            prop_assert!((sigmoid(-x) - (1.0 - sigmoid(x))).abs() <= 1e-12);
            let s = sigmoid(x);
            prop_assert!(s > 0.0 && s < 1.0);
        }

        #[test]
        fn dense_is_linear_without_bias(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = random(&mut rng, 5, 8);
            let zero = Matrix::zeros((1, 5));
            let x = random(&mut rng, 4, 8);
            let y = random(&mut rng, 4, 8);
            let lhs = dense_forward(&w, &zero, &(&x * a + &y * b)).unwrap();
            let rhs = dense_forward(&w, &zero, &x).unwrap() * a + dense_forward(&w, &zero, &y).unwrap() * b;
            for (l, r) in lhs.iter().zip(rhs.iter()) {
                prop_assert!((l - r).abs() <= 1e-10);
            }
        }
    }
}
