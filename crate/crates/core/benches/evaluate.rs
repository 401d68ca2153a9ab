//! Parallel vs sequential evaluation. Each benchmark runs inside a one-thread
//! rayon pool and inside the default pool; build with
//! `--no-default-features` to measure the plain sequential code path.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rayon::ThreadPool;

use shareinv::harness::{run_suite, ExperimentSpec, ModelFamily};
use shareinv::{make_logit_instance, make_purechar_instance, DemandModel};

fn pools() -> Vec<(String, ThreadPool)> {
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    if !cfg!(feature = "parallel") {
        return vec![("sequential".to_string(), single)];
    }
    let default = rayon::ThreadPoolBuilder::new().build().unwrap();
    let label = format!("default-pool-{}", default.current_num_threads());
    vec![("threads=1".to_string(), single), (label, default)]
}

fn evaluate(c: &mut Criterion) {
    let logit = make_logit_instance(10, 5, 5000, 1).unwrap();
    let pc = make_purechar_instance(10, 5, 5000, 1).unwrap();
    let mut group = c.benchmark_group("evaluate_n5000_j10");
    for (label, pool) in pools() {
        group.bench_function(BenchmarkId::new("logit", &label), |b| {
            b.iter(|| pool.install(|| logit.market.evaluate(&logit.x_star, true).unwrap()))
        });
        group.bench_function(BenchmarkId::new("purechar", &label), |b| {
            b.iter(|| pool.install(|| pc.market.evaluate(&pc.x_star, true).unwrap()))
        });
    }
    group.finish();
}

fn suite(c: &mut Criterion) {
    let mut spec = ExperimentSpec::new(ModelFamily::Logit, 10, 5, 500);
    spec.replications = 8;
    spec.solver_cfg.max_iterations = 100;
    let mut group = c.benchmark_group("suite_logit_8reps");
    group.sample_size(10);
    for (label, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(&label), |b| {
            b.iter(|| pool.install(|| run_suite(&spec).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, evaluate, suite);
criterion_main!(benches);
