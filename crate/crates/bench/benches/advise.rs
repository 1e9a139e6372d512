use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use topoadvisor::advisor::{advise, AdviseOptions, CostModel};
use topoadvisor::powerflow::AcSolver;
use topoadvisor::SecurityCriterion;
use topoadvisor_bench::planted_fixtures;

fn advise_fixture(c: &mut Criterion) {
    let (fixtures, db) = planted_fixtures();
    let crit = SecurityCriterion::default();
    let solver = AcSolver::default();
    let cost = CostModel::default();
    let mut group = c.benchmark_group("advise/case30");
    for k in [1, 3] {
        let opts = AdviseOptions { k, ..AdviseOptions::default() };
        group.bench_function(format!("k{k}"), |b| {
            b.iter(|| {
                for g in &fixtures {
                    black_box(advise(g, &crit, None, &db, &cost, &opts, &solver).unwrap());
                }
            })
        });
    }
    group.finish();
}

criterion_group!(benches, advise_fixture);
criterion_main!(benches);
