use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use geoknow_core::Exec;
use geoknow_model::fidelity::{example, model};
use geoknow_model::{generate_all, mean_loss, Captioner, Variant};

fn bench(c: &mut Criterion) {
    let m: Captioner<f32> = model(32, Variant::Full, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let examples: Vec<_> = (0..32).map(|_| example(&mut rng, &m.vocab, Variant::Full, 8, 12, 12)).collect();

    let mut group = c.benchmark_group("captioner");
    group.sample_size(10);
    for (name, exec) in [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)] {
        group.bench_with_input(BenchmarkId::new("generate", name), &exec, |b, &exec| {
            b.iter(|| generate_all(&m, &examples, exec).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("loss", name), &exec, |b, &exec| {
            b.iter(|| mean_loss(&m, &examples, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
