use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use strata::experiment::NamedGraph;
use strata::oracle::{diag_variance, oracle_batch_with_residuals, pull_back};
use strata_bench::{dataset, observed_oracle};

fn oracle(c: &mut Criterion) {
    let mut g = c.benchmark_group("oracle");
    for n in [1000, 5000] {
        let data = dataset(NamedGraph::Line4, n, 0);
        let u = data.scaled_noise();
        g.bench_with_input(BenchmarkId::new("latent_batch", n), &n, |b, _| {
            b.iter(|| oracle_batch_with_residuals(&data.scaled_scm, &data.batch.z, &u).unwrap())
        });
        let obs = observed_oracle(&data);
        let h = data.mixing.h().clone();
        g.bench_with_input(BenchmarkId::new("pull_back_diag_variance", n), &n, |b, _| {
            b.iter(|| diag_variance(&pull_back(&obs, &h).unwrap()).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, oracle);
criterion_main!(benches);
