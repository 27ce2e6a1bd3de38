use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use ucfed_bench::fixture;
use ucfed_core::fedprotocol::run_round;
use ucfed_core::recmodel::metrics::evaluate;
use ucfed_core::{FedConfig, ServerState};

fn rounds(c: &mut Criterion) {
    let data = fixture(300, 150, 7);
    let cfg = FedConfig { dim: 32, hidden: 16, ..FedConfig::new(7) };
    let server = ServerState::new(&data.dataset, &data.profiles, &cfg).unwrap();

    let mut group = c.benchmark_group("federated");
    group.sample_size(20);
    group.bench_function("round_300_users", |b| {
        b.iter_batched(
            || ServerState::from_parts(server.model.clone(), server.filters.clone(), &cfg).unwrap(),
            |mut s| run_round(&mut s, &data.dataset, &data.profiles, &cfg).unwrap(),
            BatchSize::LargeInput,
        )
    });
    group.bench_function("evaluate_300_users", |b| {
        b.iter(|| evaluate(&server.model, &data.dataset).unwrap())
    });
    group.finish();
}

criterion_group!(benches, rounds);
criterion_main!(benches);
