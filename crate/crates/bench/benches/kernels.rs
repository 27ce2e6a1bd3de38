use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ucfed_bench::vector;
use ucfed_core::data::AttrMask;
use ucfed_core::fedprotocol::ldp_perturb;
use ucfed_core::filters::{filter_train_step, privacy_term, AttributeFilter, PrivacyWeights};
use ucfed_core::numeric::softmax;
use ucfed_core::recmodel::bpr_gradients_vectors;
use ucfed_core::SimRng;

fn kernels(c: &mut Criterion) {
    let d = 128;
    let (u, i, j) = (vector(d, 1), vector(d, 2), vector(d, 3));
    c.bench_function("bpr_gradients_d128", |b| {
        b.iter(|| bpr_gradients_vectors(black_box(&u), black_box(&i), black_box(&j)))
    });

    let logits = vector(21, 4);
    c.bench_function("softmax_21", |b| b.iter(|| softmax(black_box(&logits))));

    let mut rng = SimRng::new(5);
    let filters: Vec<_> = [2usize, 7, 21]
        .iter()
        .enumerate()
        .map(|(t, &k)| AttributeFilter::random(format!("a{t}"), k, 64, d, 0.1, &mut rng))
        .collect();
    let weights = PrivacyWeights::new(0.5).unwrap();
    c.bench_function("privacy_term_3_attrs", |b| {
        b.iter(|| privacy_term(&filters, black_box(&u), AttrMask::full(3), &weights))
    });

    let mut f = filters[1].clone();
    c.bench_function("filter_step_single", |b| {
        b.iter(|| filter_train_step(&mut f, &[(black_box(&u[..]), 3)], 0.01))
    });

    let delta = vector(d, 6);
    c.bench_function("ldp_perturb_d128", |b| {
        b.iter(|| ldp_perturb(black_box(&delta), 0.5, 1.0, &mut rng))
    });
}

criterion_group!(benches, kernels);
criterion_main!(benches);
