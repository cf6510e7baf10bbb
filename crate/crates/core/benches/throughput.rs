//! Criterion benches for the hot numeric paths.
//!
//! Two comparisons matter here:
//! - covariance assembly and reconstruction through the default
//!   (data-parallel) path versus a single-threaded pool, to measure the
//!   rayon win on this machine (build with `--no-default-features` for the
//!   fully sequential fallback);
//! - the aggregated arc objective (m waypoints, p interpolated points per
//!   segment) versus the same point count as free inducing points, which is
//!   the group-sized-factorization saving.

use criterion::{criterion_group, criterion_main, Criterion};

use ipp_core::env::{sample_uniform, Environment};
use ipp_core::eval;
use ipp_core::kernel::RbfKernel;
use ipp_core::plan::{objective_with_sensing, PenaltyConfig};
use ipp_core::sgp::{InducingPaths, SgpModel};
use ipp_core::transform::SensingModel;

fn env2d() -> Environment {
    Environment::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap()
}

fn bench_cov_matrix(c: &mut Criterion) {
    let env = env2d();
    let kernel = RbfKernel::isotropic(1.0, 0.2, 2).unwrap();
    let a = sample_uniform(&env, 1500, 1).unwrap();
    let b = sample_uniform(&env, 400, 2).unwrap();

    let mut group = c.benchmark_group("cov_matrix_1500x400");
    group.bench_function("default", |bench| {
        bench.iter(|| kernel.cov_matrix(&a, &b).unwrap())
    });
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        group.bench_function("single_thread", |bench| {
            bench.iter(|| pool.install(|| kernel.cov_matrix(&a, &b).unwrap()))
        });
    }
    group.finish();
}

fn bench_posterior(c: &mut Criterion) {
    let env = env2d();
    let kernel = RbfKernel::isotropic(1.0, 0.2, 2).unwrap();
    let obs = sample_uniform(&env, 300, 3).unwrap();
    let y: Vec<f64> = (0..300).map(|i| (i as f64 * 0.01).sin()).collect();
    let field = eval::sample_gp_field(&kernel, &env, &[40, 40], 7).unwrap();
    let grid = field.grid_points();

    let mut group = c.benchmark_group("gp_posterior_300obs_1600query");
    group.sample_size(20);
    group.bench_function("default", |bench| {
        bench.iter(|| eval::gp_posterior(&kernel, 0.01, &obs, &y, &grid).unwrap())
    });
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        group.bench_function("single_thread", |bench| {
            bench.iter(|| {
                pool.install(|| eval::gp_posterior(&kernel, 0.01, &obs, &y, &grid).unwrap())
            })
        });
    }
    group.finish();
}

fn bench_aggregated_vs_free(c: &mut Criterion) {
    let env = env2d();
    let kernel = RbfKernel::isotropic(1.0, 0.2, 2).unwrap();
    let train = sample_uniform(&env, 1000, 5).unwrap();
    let model = SgpModel::new(kernel, &train, 0.01).unwrap();
    let penalties = PenaltyConfig::none();

    let (m, p) = (20usize, 10usize);
    let arc_paths = InducingPaths::single_robot(&sample_uniform(&env, m, 11).unwrap()).unwrap();
    let arc = SensingModel::Arc {
        points_per_segment: p,
    };
    let free_paths = InducingPaths::single_robot(&sample_uniform(&env, 200, 13).unwrap()).unwrap();
    let point = SensingModel::Point;

    let mut group = c.benchmark_group("objective_value_and_grad");
    group.sample_size(30);
    group.bench_function("aggregated_m20_p10", |bench| {
        bench.iter(|| objective_with_sensing(&model, &arc_paths, &arc, &penalties, &env).unwrap())
    });
    group.bench_function("free_200_inducing", |bench| {
        bench
            .iter(|| objective_with_sensing(&model, &free_paths, &point, &penalties, &env).unwrap())
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_cov_matrix,
    bench_posterior,
    bench_aggregated_vs_free
);
criterion_main!(benches);
