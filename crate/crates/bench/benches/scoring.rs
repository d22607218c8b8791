use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use keyrel::experiment::ModelFamily;
use keyrel::serving::Workload;

const ITEMS: usize = 400;
const KEYPHRASES: usize = 250;

fn scoring(c: &mut Criterion) {
    let mut group = c.benchmark_group("score_pairs_full");
    group.sample_size(10);
    for family in [ModelFamily::Jaccard, ModelFamily::BiContrastive, ModelFamily::CrossTiny] {
        for n_pairs in [1_000, 10_000] {
            let w = Workload::generate(family, ITEMS, KEYPHRASES, n_pairs, 1).expect("workload");
            group.throughput(Throughput::Elements(n_pairs as u64));
            group.bench_with_input(BenchmarkId::new(family.name(), n_pairs), &w, |b, w| {
                b.iter(|| w.scorer.score_pairs_full(&w.catalog, &w.pairs).expect("scores"))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, scoring);
criterion_main!(benches);
