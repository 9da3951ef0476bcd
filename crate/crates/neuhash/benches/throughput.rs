//! Parallel (rayon chunks) vs sequential throughput for the two data-parallel
//! hot paths: batch gradients and full-codebook evaluation. `threads = 1` is
//! the same code path the build takes with the `parallel` feature disabled.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::collections::HashMap;
use std::hint::black_box;

use neuhash::corpus::{Dataset, Rating, SparseVec, SplitKind, Split, VocabEntry};
use neuhash::eval::evaluate;
use neuhash::model::{loss_and_grads_with_noise, draw_batch_noise, Hyper, ModelDims, ModelParams, Variant};
use neuhash::rng::{stream, stream_rng};
use neuhash::trainer::infer_all_codes;

fn bench_dataset(users: usize, items: usize, vocab: usize) -> Dataset {
    let mut ratings = Vec::new();
    for u in 0..users as u32 {
        for i in 0..items.min(40) as u32 {
            let item = (u.wrapping_mul(7).wrapping_add(i * 13)) % items as u32;
            ratings.push(Rating { user: u, item, rating: ((u + item) % 5 + 1) as f64 });
        }
    }
    ratings.sort_unstable_by_key(|r| (r.user, r.item));
    ratings.dedup_by_key(|r| (r.user, r.item));
    let content = (0..items)
        .map(|i| {
            let indices: Vec<u32> =
                (0..8).map(|k| ((i * 31 + k * 17) % vocab) as u32).collect();
            let mut indices: Vec<u32> = indices.into_iter().collect::<std::collections::BTreeSet<_>>().into_iter().collect();
            indices.truncate(8);
            let w = 1.0 / (indices.len() as f64).sqrt();
            let values = vec![w; indices.len()];
            SparseVec { indices, values }
        })
        .collect();
    Dataset {
        user_ids: (0..users).map(|u| format!("u{u}")).collect(),
        item_ids: (0..items).map(|i| format!("i{i}")).collect(),
        user_index: (0..users).map(|u| (format!("u{u}"), u as u32)).collect::<HashMap<_, _>>(),
        item_index: (0..items).map(|i| (format!("i{i}"), i as u32)).collect::<HashMap<_, _>>(),
        ratings,
        content,
        vocab: (0..vocab).map(|w| VocabEntry { word: format!("w{w}"), idf: 1.0 }).collect(),
        max_rating: 5.0,
    }
}

fn gradient_batch(c: &mut Criterion) {
    let ds = bench_dataset(500, 300, 200);
    let dims = ModelDims {
        code_bits: 32,
        num_users: ds.num_users(),
        num_items: ds.num_items(),
        vocab: ds.vocab.len(),
        hidden1: 128,
        hidden2: 128,
    };
    let params = ModelParams::init(&dims, Variant::ContentAware, 3).unwrap();
    let hyper = Hyper::default();
    let batch: Vec<Rating> = ds.ratings.iter().take(512).copied().collect();
    let mut rng = stream_rng(5, stream::NOISE);
    let noise = draw_batch_noise(batch.len(), dims.code_bits, &mut rng);

    let max_threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(2);
    let mut group = c.benchmark_group("gradient_batch");
    group.sample_size(10);
    for threads in [1usize, max_threads] {
        group.bench_with_input(BenchmarkId::from_parameter(threads), &threads, |b, &t| {
            b.iter(|| {
                loss_and_grads_with_noise(
                    black_box(&batch),
                    &ds,
                    &params,
                    &hyper,
                    &noise,
                    t,
                )
                .unwrap()
            });
        });
    }
    group.finish();
}

fn evaluation(c: &mut Criterion) {
    let ds = bench_dataset(800, 400, 200);
    let dims = ModelDims {
        code_bits: 32,
        num_users: ds.num_users(),
        num_items: ds.num_items(),
        vocab: ds.vocab.len(),
        hidden1: 64,
        hidden2: 64,
    };
    let params = ModelParams::init(&dims, Variant::ContentAware, 3).unwrap();
    let book = infer_all_codes(&params, &ds, 0).unwrap();
    let mid = ds.ratings.len() / 2;
    let split = Split {
        kind: SplitKind::InMatrix,
        train: ds.ratings[..mid].to_vec(),
        validation: vec![],
        test: ds.ratings[mid..].to_vec(),
        train_fraction: None,
        seed: 0,
    };

    let max_threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(2);
    let mut group = c.benchmark_group("evaluate_users");
    group.sample_size(10);
    for threads in [1usize, max_threads] {
        group.bench_with_input(BenchmarkId::from_parameter(threads), &threads, |b, &t| {
            b.iter(|| evaluate(black_box(&book), &split, &ds, &[2, 6, 10], t).unwrap());
        });
    }
    group.finish();
}

criterion_group!(benches, gradient_batch, evaluation);
criterion_main!(benches);
