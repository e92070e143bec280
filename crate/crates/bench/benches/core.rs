use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use csst_core::css::synthesize;
use csst_core::cst::{sample_rng, DatasetIndex, TrainConfig, Trainer};
use csst_core::dataset::{generate_benchmark, Benchmark, BenchmarkConfig};
use csst_core::model::{vqa_forward, ModelDims, VqaInput};
use csst_core::{CrMode, CssConfig, FusionMode, Graph, ModelParams, Tensor};

fn bench_data(n_train: usize) -> Benchmark {
    generate_benchmark(&BenchmarkConfig {
        n_train,
        n_test: 0,
        ..BenchmarkConfig::default()
    })
    .expect("default benchmark config is valid")
}

fn params_for(b: &Benchmark) -> ModelParams {
    let s = &b.train[0];
    let dims = ModelDims::for_vocab(&b.vocab, s.feature_dim(), s.question_tokens.len());
    ModelParams::init(dims, FusionMode::LogitSum, 0).expect("valid dims")
}

fn matmul(c: &mut Criterion) {
    let a = Tensor::new(vec![64, 64], (0..64 * 64).map(|i| (i % 7) as f64 * 0.1).collect()).unwrap();
    let b = Tensor::new(vec![64, 64], (0..64 * 64).map(|i| (i % 5) as f64 * 0.1).collect()).unwrap();
    c.bench_function("matmul_64_forward_backward", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let x = g.param(a.clone());
            let y = g.param(b.clone());
            let p = g.matmul(x, y).unwrap();
            let s = g.sum(p).unwrap();
            black_box(g.backward(s).unwrap());
        })
    });
}

fn model(c: &mut Criterion) {
    let data = bench_data(64);
    let params = params_for(&data);
    let input = VqaInput::from_sample(&data.train[0]);
    let mask = data.vocab.mask_token;
    c.bench_function("model_forward", |b| b.iter(|| black_box(params.predict(black_box(&input), mask).unwrap())));
    c.bench_function("model_forward_backward", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let p = params.bind(&mut g, true);
            let out = vqa_forward(&mut g, &params, &p, &input, mask, false).unwrap();
            let s = g.sum(out.logits).unwrap();
            black_box(g.backward(s).unwrap());
        })
    });
    let css = CssConfig::default();
    c.bench_function("synthesize", |b| {
        let mut rng = sample_rng(0, 0, 0);
        b.iter(|| black_box(synthesize(&params, &data.train[0], &data.vocab, &css, &mut rng).unwrap()))
    });
}

fn train_epoch(c: &mut Criterion) {
    let data = bench_data(256);
    let index = DatasetIndex::new(&data.train);
    let mut group = c.benchmark_group("train_epoch_256");
    group.sample_size(10);
    for (name, css, cr) in [("plain", false, CrMode::None), ("css", true, CrMode::None), ("csst", true, CrMode::G)] {
        let cfg = TrainConfig {
            css,
            cr_mode: cr,
            fusion: FusionMode::LogitSum,
            ..TrainConfig::default()
        };
        group.bench_function(name, |b| {
            b.iter_batched(
                || Trainer::for_samples(cfg.clone(), CssConfig::default(), data.vocab.clone(), &data.train).unwrap(),
                |mut t| black_box(t.train_epoch(&data.train, &index).unwrap()),
                BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, matmul, model, train_epoch);
criterion_main!(benches);
