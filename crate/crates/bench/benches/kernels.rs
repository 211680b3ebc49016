use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use lod_bench::{batch, bimodal_losses, scores};
use lod_core::filter::kmeans2;
use lod_core::metrics::{auroc, fpr95};
use lod_core::nn::{ce_loss_with_grad, Mode};
use lod_core::Network;

fn forward_backward(c: &mut Criterion) {
    let b = batch(128, 20, 5, 1);
    let mut net = Network::new(&[20, 64, 64, 64, 5], 2).unwrap().with_dropout(0.3).unwrap();
    c.bench_function("mlp 20-64x3-5 forward+backward, batch 128", |bench| {
        bench.iter(|| {
            let (logits, cache) = net.forward(black_box(b.inputs.view()), Mode::Train).unwrap();
            let (_, g) = ce_loss_with_grad(logits.view(), &b.labels).unwrap();
            black_box(net.backward(&cache, g.view()).unwrap())
        })
    });
}

fn clustering(c: &mut Criterion) {
    let u = bimodal_losses(1000, 3);
    c.bench_function("kmeans2 on 1000 mean losses", |bench| {
        bench.iter(|| kmeans2(black_box(&u)).unwrap())
    });
}

fn metrics(c: &mut Criterion) {
    let (id, ood) = scores(1000, 4);
    c.bench_function("auroc 1000 vs 1000", |bench| {
        bench.iter(|| auroc(black_box(&id), black_box(&ood)).unwrap())
    });
    c.bench_function("fpr95 1000 vs 1000", |bench| {
        bench.iter(|| fpr95(black_box(&id), black_box(&ood)).unwrap())
    });
}

criterion_group!(benches, forward_backward, clustering, metrics);
criterion_main!(benches);
