//! Whole-model contracts: gradients, loss sanity, overfitting, and the
//! embedding tap in eval mode.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reid_core::model::{BlockSpec, Model, ModelSpec, Variant};
use reid_core::nn::{softmax_cross_entropy, Bound, Mode};
use reid_core::optim::AdamState;
use reid_core::tensor::gradcheck::grad_check;
use reid_core::Tensor;

fn small_spec(variant: Variant, ids: usize) -> ModelSpec {
    ModelSpec {
        input_channels: 3,
        input_h: 8,
        input_w: 6,
        backbone: vec![
            BlockSpec {
                channels: 4,
                kernel: 3,
                stride: 2,
            },
            BlockSpec {
                channels: 8,
                kernel: 3,
                stride: 1,
            },
        ],
        num_identities: ids,
        variant,
        bottleneck_dim: 6,
        dropout_p: 0.5,
        decay_bn: true,
    }
}

fn images(n: usize, spec: &ModelSpec, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(&[n, spec.input_channels, spec.input_h, spec.input_w], rng)
}

#[test]
fn full_model_gradient_check() {
    for variant in [Variant::GoodPractices, Variant::NoBn, Variant::Bottleneck] {
        let spec = small_spec(variant, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = Model::build(&spec, &mut rng).unwrap();
        let mut inputs: Vec<Tensor> = model.params().iter().map(|p| p.value.clone()).collect();
        inputs.push(images(2, &spec, &mut rng));
        let labels = [0, 2];
        let err = grad_check(
            |g, vars| {
                let (params, x) = vars.split_at(vars.len() - 1);
                let bound = Bound::from_vars(params.to_vec());
                let out = model.forward(g, &bound, x[0], Mode::Train, None).map_err(|e| match e {
                    reid_core::model::ModelError::Tensor(t) => t,
                    other => panic!("{other}"),
                })?;
                softmax_cross_entropy(g, out.logits, &labels)
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{variant}: {err}");
    }
}

#[test]
fn untrained_loss_is_near_log_classes() {
    let classes = 10;
    let spec = ModelSpec::desk(classes, Variant::GoodPractices);
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Model::build(&spec, &mut rng).unwrap();
        let x = images(8, &spec, &mut rng);
        let labels: Vec<usize> = (0..8).map(|_| rng.gen_range(0..classes)).collect();
        let loss = model.forward_train(&x, &labels, &mut rng).unwrap().loss;
        let ln_c = (classes as f64).ln();
        assert!((loss - ln_c).abs() < 0.2 * ln_c, "seed {seed}: {loss}");
    }
}

#[test]
fn duplicated_batch_gives_identical_loss() {
    let spec = small_spec(Variant::GoodPractices, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = Model::build(&spec, &mut rng).unwrap();
    let x = images(4, &spec, &mut rng);
    let labels = vec![0, 1, 2, 3];
    let doubled = Tensor::stack_rows(&[x.clone(), x.clone()]).unwrap();
    let doubled_labels: Vec<usize> = labels.iter().chain(&labels).copied().collect();
    let loss_a = model.clone().forward_train(&x, &labels, &mut rng).unwrap().loss;
    let loss_b = model.clone().forward_train(&doubled, &doubled_labels, &mut rng).unwrap().loss;
    assert!((loss_a - loss_b).abs() < 1e-12, "{loss_a} vs {loss_b}");
}

#[test]
fn overfits_a_single_batch() {
    let spec = small_spec(Variant::GoodPractices, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut model = Model::build(&spec, &mut rng).unwrap();
    let x = images(8, &spec, &mut rng);
    let labels = vec![0, 1, 2, 3, 0, 1, 2, 3];
    let mut adam = AdamState::new(0.01, 0.0);
    adam.init(model.params());
    let mut loss = f64::INFINITY;
    for _ in 0..200 {
        let out = model.forward_train(&x, &labels, &mut rng).unwrap();
        loss = out.loss;
        adam.step(model.params_mut(), &out.grads).unwrap();
    }
    assert!(loss < 0.01, "final loss {loss}");
}

#[test]
fn every_parameter_receives_gradient() {
    for variant in Variant::ALL {
        let spec = small_spec(variant, 3);
        let reached = (0..5).any(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut model = Model::build(&spec, &mut rng).unwrap();
            let x = images(4, &spec, &mut rng);
            let out = model.forward_train(&x, &[0, 1, 2, 0], &mut rng).unwrap();
            out.grads.iter().all(|g| g.data().iter().any(|&v| v != 0.0))
        });
        assert!(reached, "{variant}: some parameter never received a gradient");
    }
}

fn trained_eval_model(variant: Variant) -> (Model, ModelSpec) {
    let spec = small_spec(variant, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut model = Model::build(&spec, &mut rng).unwrap();
    for _ in 0..3 {
        let x = images(4, &spec, &mut rng);
        model.forward_train(&x, &[0, 1, 2, 1], &mut rng).unwrap();
    }
    model.set_mode(Mode::Eval);
    (model, spec)
}

#[test]
fn eval_extraction_is_per_sample_independent_and_repeatable() {
    for variant in Variant::ALL {
        let (model, spec) = trained_eval_model(variant);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = images(5, &spec, &mut rng);
        let joint = model.extract_embedding(&x, true).unwrap();
        assert_eq!(joint, model.extract_embedding(&x, true).unwrap());
        for i in 0..5 {
            let single = model.extract_embedding(&x.slice_rows(i, i + 1).unwrap(), true).unwrap();
            assert_eq!(single.data(), joint.slice_rows(i, i + 1).unwrap().data(), "{variant} sample {i}");
        }
        let width = match variant {
            Variant::Bottleneck => spec.bottleneck_dim,
            _ => spec.backbone.last().unwrap().channels,
        };
        assert_eq!(joint.shape(), &[5, width]);
    }
}

#[test]
fn flip_fusion_is_a_no_op_on_mirror_symmetric_input() {
    let (model, spec) = trained_eval_model(Variant::GoodPractices);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = images(3, &spec, &mut rng);
    let sym: Vec<f64> = x.data().iter().zip(x.flip_last_axis().data()).map(|(a, b)| (a + b) / 2.0).collect();
    let sym = Tensor::new(x.shape(), sym).unwrap();
    assert_eq!(sym, sym.flip_last_axis());
    let on = model.extract_embedding(&sym, true).unwrap();
    let off = model.extract_embedding(&sym, false).unwrap();
    for (a, b) in on.data().iter().zip(off.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn embedding_is_bn_of_pooled_features() {
    let (model, spec) = trained_eval_model(Variant::GoodPractices);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = images(3, &spec, &mut rng);
    let emb = model.extract_embedding(&x, false).unwrap();

    // pooled features from the same model with the neck cut off
    let mut g = reid_core::Graph::new();
    let bound = model.params().bind(&mut g, false);
    let xv = g.constant(x.clone());
    let mut h = xv;
    for layer in model.layers() {
        if let reid_core::model::Layer::Conv {
            weight,
            bias,
            stride,
            padding,
        } = layer
        {
            let c = reid_core::nn::conv2d(&mut g, h, bound.var(*weight), Some(bound.var(*bias)), *stride, *padding)
                .unwrap();
            h = g.relu(c).unwrap();
        }
    }
    let pooled = reid_core::nn::global_avg_pool(&mut g, h).unwrap();
    let pooled = g.value(pooled).clone();

    let bn = model.neck_bn().unwrap();
    let gamma = model.params().get(bn.gamma);
    let beta = model.params().get(bn.beta);
    let f = bn.features();
    for i in 0..3 {
        for j in 0..f {
            let expected = gamma.data()[j] * (pooled.get(&[i, j]) - bn.running_mean[j])
                / (bn.running_var[j] + bn.eps).sqrt()
                + beta.data()[j];
            assert_eq!(emb.get(&[i, j]), expected);
        }
    }
}
