//! Statistical invariants of batch normalization on random batches.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reid_core::nn::{batchnorm_eval, batchnorm_train, dropout, Mode};
use reid_core::{Graph, Tensor};

const EPS: f64 = 1e-5;

proptest! {
    #[test]
    fn train_mode_output_is_standardized(n in 8usize..40, f in 1usize..6, seed in any::<u64>(), scale in 0.01f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::randn(&[n, f], &mut rng).map(|v| scale * v + 3.0);
        let gamma: Vec<f64> = (0..f).map(|_| rng.gen_range(0.2..2.0)).collect();
        let beta: Vec<f64> = (0..f).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut g = Graph::new();
        let (xv, gv, bv) = (
            g.constant(x.clone()),
            g.constant(Tensor::from_vec(gamma.clone())),
            g.constant(Tensor::from_vec(beta.clone())),
        );
        let (y, stats) = batchnorm_train(&mut g, xv, gv, bv, EPS).unwrap();
        let y = g.value(y);
        for j in 0..f {
            let col: Vec<f64> = (0..n).map(|i| y.get(&[i, j]) - beta[j]).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let s2 = stats.var[j];
            let target = gamma[j] * gamma[j] * s2 / (s2 + EPS);
            prop_assert!(mean.abs() < 1e-6, "mean {}", mean);
            prop_assert!((var - target).abs() < 1e-4, "var {} target {}", var, target);
        }
    }

    #[test]
    fn eval_mode_is_batch_composition_invariant(n in 1usize..12, f in 1usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::randn(&[n, f], &mut rng);
        let mean: Vec<f64> = (0..f).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let var: Vec<f64> = (0..f).map(|_| rng.gen_range(0.1..3.0)).collect();
        let gamma = Tensor::randn(&[f], &mut rng);
        let beta = Tensor::randn(&[f], &mut rng);
        let run = |rows: &Tensor| {
            let mut g = Graph::new();
            let (xv, gv, bv) = (g.constant(rows.clone()), g.constant(gamma.clone()), g.constant(beta.clone()));
            let y = batchnorm_eval(&mut g, xv, gv, bv, &mean, &var, EPS).unwrap();
            g.value(y).clone()
        };
        let joint = run(&x);
        for i in 0..n {
            let single = run(&x.slice_rows(i, i + 1).unwrap());
            prop_assert_eq!(single, joint.slice_rows(i, i + 1).unwrap());
        }
        // any permutation of the batch permutes the output rows bitwise
        let reversed: Vec<Tensor> = (0..n).rev().map(|i| x.slice_rows(i, i + 1).unwrap()).collect();
        let out = run(&Tensor::stack_rows(&reversed).unwrap());
        for i in 0..n {
            prop_assert_eq!(out.slice_rows(n - 1 - i, n - i).unwrap(), joint.slice_rows(i, i + 1).unwrap());
        }
    }

    #[test]
    fn dropout_eval_is_identity(n in 1usize..6, f in 1usize..8, p in 0.0f64..0.99, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::randn(&[n, f], &mut rng);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let y = dropout(&mut g, xv, p, Mode::Eval, &mut rng).unwrap();
        prop_assert_eq!(g.value(y), &x);
    }
}
