//! Grid kernels under the full rayon pool versus a single-thread pool.
//!
//! The single-thread pool runs the same code as the sequential build; to
//! bench the build without rayon at all, pass `--no-default-features`.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use crkam::calculus::{gauge_transform, tangential_frame, DefiningSurface};
use crkam::field::ConnectionForm;
use crkam::norms::{ck_norm, fs_norm};
use crkam::problem::{manufacture_problem, ProblemSpec};
use crkam::solver::solve_series;
use std::hint::black_box;
use std::sync::Arc;

#[cfg(feature = "parallel")]
type Pool = Option<rayon::ThreadPool>;
#[cfg(not(feature = "parallel"))]
type Pool = Option<()>;

fn pools() -> Vec<(&'static str, Pool)> {
    #[cfg(feature = "parallel")]
    {
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        vec![("sequential", Some(one)), ("parallel", None)]
    }
    #[cfg(not(feature = "parallel"))]
    {
        vec![("sequential", None)]
    }
}

fn on<R: Send>(pool: &Pool, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    if let Some(p) = pool {
        return p.install(f);
    }
    #[cfg(not(feature = "parallel"))]
    let _ = pool;
    f()
}

fn kernels(c: &mut Criterion) {
    let spec = ProblemSpec { resolution: 9, ..ProblemSpec::default() };
    let m = manufacture_problem(&spec).unwrap();
    let frame = tangential_frame(&DefiningSurface::heisenberg(spec.n)).unwrap();
    let exact = m.omega0.exact.clone().unwrap();
    let chart = Arc::clone(&m.omega0.chart);
    let grid = m.omega0.clone().into_grid();

    let mut g = c.benchmark_group("kernels");
    g.sample_size(10);
    for (label, pool) in pools() {
        g.bench_function(BenchmarkId::new("evaluate_exact", label), |b| {
            b.iter(|| on(&pool, || ConnectionForm::from_exact(Arc::clone(&chart), black_box(&exact)).unwrap()))
        });
        g.bench_function(BenchmarkId::new("gauge_transform", label), |b| {
            b.iter(|| on(&pool, || gauge_transform(black_box(&grid), &m.a_true, &frame).unwrap()))
        });
        g.bench_function(BenchmarkId::new("c1_norm", label), |b| {
            b.iter(|| on(&pool, || ck_norm(black_box(&grid), chart.rho(), 1).unwrap()))
        });
        g.bench_function(BenchmarkId::new("fs_norm", label), |b| {
            b.iter(|| on(&pool, || fs_norm(black_box(&grid), 0, 0.5, &frame).unwrap()))
        });
    }
    g.bench_function("solve_series_weight_14", |b| b.iter(|| solve_series(black_box(&exact), 14).unwrap()));
    g.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
