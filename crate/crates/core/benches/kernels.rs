//! Hot kernels under the active execution mode. Compare the two modes with
//! `cargo bench -p reid-core` and `cargo bench -p reid-core --no-default-features`.

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reid_core::eval::{evaluate, pairwise_euclidean, EmbeddingSet, Protocol};
use reid_core::exec;
use reid_core::model::{Model, ModelSpec, Variant};
use reid_core::nn::{conv2d, Mode};
use reid_core::{Graph, Tensor};

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::randn(&[32, 16, 32, 16], &mut rng);
    let w = Tensor::randn(&[32, 16, 3, 3], &mut rng);
    let b = Tensor::randn(&[32], &mut rng);
    let mut group = c.benchmark_group(format!("conv2d/{}", exec::MODE));
    group.bench_function("forward_32x16x32x16", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
            black_box(conv2d(&mut g, xv, wv, Some(bv), 2, 1).unwrap());
        })
    });
    group.bench_function("forward_backward_32x16x32x16", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let (xv, wv, bv) = (g.param(x.clone()), g.param(w.clone()), g.param(b.clone()));
            let y = conv2d(&mut g, xv, wv, Some(bv), 2, 1).unwrap();
            let s = g.sum(y).unwrap();
            g.backward(s).unwrap();
            black_box(g.grad(wv));
        })
    });
    group.finish();
}

fn train_step(c: &mut Criterion) {
    let spec = ModelSpec::desk(10, Variant::GoodPractices);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = Model::build(&spec, &mut rng).unwrap();
    let x = Tensor::randn(&[32, 3, 64, 32], &mut rng);
    let labels: Vec<usize> = (0..32).map(|i| i % 10).collect();
    let mut group = c.benchmark_group(format!("model/{}", exec::MODE));
    group.sample_size(20);
    group.bench_function("forward_train_batch32_64x32", |bench| {
        bench.iter(|| {
            let mut m = model.clone();
            black_box(m.forward_train(&x, &labels, &mut rng).unwrap().loss);
        })
    });
    let mut eval_model = model.clone();
    eval_model.set_mode(Mode::Eval);
    let images = Tensor::randn(&[96, 3, 64, 32], &mut rng);
    group.bench_function("extract_embedding_96_flip", |bench| {
        bench.iter(|| black_box(eval_model.extract_embedding(&images, true).unwrap()))
    });
    group.finish();
}

fn retrieval(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (nq, ng, f) = (500, 2000, 128);
    let q = Tensor::randn(&[nq, f], &mut rng);
    let g = Tensor::randn(&[ng, f], &mut rng);
    let query = EmbeddingSet::new(q.clone(), (0..nq as u64).map(|i| i % 100).collect(), vec![0; nq]).unwrap();
    let gallery = EmbeddingSet::new(
        g.clone(),
        (0..ng as u64).map(|i| i % 100).collect(),
        (0..ng as u32).map(|i| 1 + i % 3).collect(),
    )
    .unwrap();
    let mut group = c.benchmark_group(format!("retrieval/{}", exec::MODE));
    group.sample_size(20);
    group.bench_function("pairwise_euclidean_500x2000x128", |bench| {
        bench.iter(|| black_box(pairwise_euclidean(&q, &g).unwrap()))
    });
    group.bench_function("evaluate_500x2000x128", |bench| {
        bench.iter(|| black_box(evaluate(&query, &gallery, &Protocol::default()).unwrap()))
    });
    group.finish();
}

criterion_group!(benches, conv, train_step, retrieval);
criterion_main!(benches);
