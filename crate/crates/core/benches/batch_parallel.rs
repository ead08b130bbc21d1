//! One training step of the default network on a batch of 64, and the
//! augmentation of one subject, on a 1-thread pool versus a pool with every
//! core.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use wordaad::augment::{build_augmented_corpus, AugmentConfig};
use wordaad::eegnet::{EegNet, EegNetConfig};
use wordaad::nn::{bce_with_logits, HasParams, Mode, Tensor4};
use wordaad::synth::{synth_dataset, SynthConfig};
use wordaad::RngStream;

fn pools() -> Vec<(usize, rayon::ThreadPool)> {
    let all = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut sizes = vec![1];
    if all > 1 {
        sizes.push(all);
    }
    sizes
        .into_iter()
        .map(|n| (n, rayon::ThreadPoolBuilder::new().num_threads(n).build().expect("thread pool")))
        .collect()
}

fn train_step(c: &mut Criterion) {
    let rng = RngStream::derive(1, "bench").unwrap();
    let mut net = EegNet::<f32>::new(EegNetConfig::default(), &rng.child("init")).unwrap();
    let mut r = rng.child("input");
    let n = 64;
    let x = Tensor4::from_vec(n, 1, 32, 307, (0..n * 32 * 307).map(|_| 10.0 * r.normal() as f32).collect()).unwrap();
    let y: Vec<f32> = (0..n).map(|i| (i % 2) as f32).collect();
    let dropout = rng.child("dropout");
    let mut group = c.benchmark_group("train_step_batch64");
    group.sample_size(10);
    for (threads, pool) in pools() {
        group.bench_with_input(BenchmarkId::from_parameter(threads), &threads, |b, _| {
            b.iter(|| {
                pool.install(|| {
                    net.zero_grad();
                    let logits = net.forward_logits(&x, Mode::Train, Some(&dropout)).unwrap();
                    let (_, g) = bce_with_logits(&logits, &y).unwrap();
                    net.backward(&g).unwrap();
                })
            })
        });
    }
    group.finish();
}

fn augment_subjects(c: &mut Criterion) {
    let cfg = SynthConfig { n_subjects: 4, counts: [(12, 48); 3], attended_rejections: [0; 3], ..Default::default() };
    let original = synth_dataset(&cfg, 3).unwrap().epochs;
    let aug = AugmentConfig::default();
    let rng = RngStream::derive(3, "bench/augment").unwrap();
    let mut group = c.benchmark_group("augment_4_subjects");
    group.sample_size(10);
    for (threads, pool) in pools() {
        group.bench_with_input(BenchmarkId::from_parameter(threads), &threads, |b, _| {
            b.iter(|| pool.install(|| build_augmented_corpus(&original, &aug, 0, &rng).unwrap().len()))
        });
    }
    group.finish();
}

criterion_group!(benches, train_step, augment_subjects);
criterion_main!(benches);
