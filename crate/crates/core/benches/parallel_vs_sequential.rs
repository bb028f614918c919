use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use tempex::datagen::{generate_hmm, HmmConfig};
use tempex::explainers::{explain_learned, occlusion, ExplainerConfig, OcclusionConfig};
use tempex::nets::{train_classifier, TrainConfig};
use tempex::par;

fn explanation_batches(c: &mut Criterion) {
    let ds = generate_hmm(&HmmConfig {
        n_series: 32,
        length: 30,
        ..HmmConfig::default()
    })
    .unwrap();
    let tc = TrainConfig {
        hidden_size: 16,
        epochs: 2,
        ..TrainConfig::default()
    };
    let (f, _) = train_classifier(&ds, &tc).unwrap();
    let xs: Vec<_> = (0..16).map(|i| ds.sample(i)).collect();
    let learned = ExplainerConfig {
        iterations: 20,
        ..ExplainerConfig::default()
    };
    let occ = OcclusionConfig::default();

    let mut group = c.benchmark_group("explain_16_samples");
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("learned", "parallel"), |b| {
        b.iter(|| par::map_indices(xs.len(), |i| explain_learned(&xs[i], &f, &learned).unwrap()))
    });
    group.bench_function(BenchmarkId::new("learned", "sequential"), |b| {
        b.iter(|| par::map_indices_sequential(xs.len(), |i| explain_learned(&xs[i], &f, &learned).unwrap()))
    });
    group.bench_function(BenchmarkId::new("occlusion", "parallel"), |b| {
        b.iter(|| par::map_indices(xs.len(), |i| occlusion(&xs[i], &f, &occ).unwrap()))
    });
    group.bench_function(BenchmarkId::new("occlusion", "sequential"), |b| {
        b.iter(|| par::map_indices_sequential(xs.len(), |i| occlusion(&xs[i], &f, &occ).unwrap()))
    });
    group.finish();
}

criterion_group!(benches, explanation_batches);
criterion_main!(benches);
