use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use rapidpgs::pipeline::Sequence;

use rapidpgs_bench::{case, config};

// One update period on a 50 x 40 grid with 20 realizations.
fn period_step(c: &mut Criterion) {
    let fixture = case(config(50, 40, 20));
    let seq = Sequence::new(&fixture.cfg, &fixture.observations).unwrap();
    let start = seq.initial_state(fixture.prior.clone()).unwrap();
    let mut group = c.benchmark_group("period");
    group.sample_size(10);
    group.bench_function("first period", |b| {
        b.iter_batched(
            || start.clone(),
            |mut state| seq.step(&mut state).unwrap(),
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(benches, period_step);
criterion_main!(benches);
