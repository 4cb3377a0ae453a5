use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gwib::model::{objective_and_gradient, CfrParams, FactualBatch, Mode, ModelShape, RegPlans, RegularizerContext, RegularizerRecipe};
use gwib::ot::{conditional_gradient, pairwise_dist, CgOptions, FusedProblem, GwSolver, TransportPlan};
use gwib::{par, DenseMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cloud(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

/// Run the same closure on a one-worker pool and on the default pool.
fn compare<R: Send>(c: &mut Criterion, group: &str, size: usize, f: impl Fn() -> R + Sync) {
    let mut g = c.benchmark_group(group);
    g.sample_size(10);
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    for (label, workers) in [("sequential", 1), ("parallel", threads)] {
        g.bench_with_input(BenchmarkId::new(label, size), &workers, |b, &w| {
            par::with_threads(w, || b.iter(|| black_box(f())));
        });
    }
    g.finish();
}

fn dense_products(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for n in [64, 256] {
        let a = DenseMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let b = DenseMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        compare(c, "matmul", n, || a.matmul(&b).unwrap());
    }
}

fn distances(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pts = cloud(&mut rng, 400, 16);
    compare(c, "pairwise_dist", 400, || pairwise_dist(&pts, &pts).unwrap());
}

fn fused_solve(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for n in [40, 120] {
        let (x0, x1) = (cloud(&mut rng, n, 8), cloud(&mut rng, n + 7, 8));
        let (z0, z1) = (cloud(&mut rng, n, 4), cloud(&mut rng, n + 7, 4));
        let d = |a: &[Vec<f64>], b: &[Vec<f64>]| pairwise_dist(a, b).unwrap();
        let d_z01 = gwib::ot::pairwise_sq_dist(&z0, &z1).unwrap();
        let prob = FusedProblem::new(d(&x0, &x0), d(&x1, &x1), d(&z0, &z0), d(&z1, &z1), d_z01, 0.9).unwrap();
        let init = TransportPlan::product(prob.quadratic().source(), prob.quadratic().target());
        compare(c, "fused_cg", n, || conditional_gradient(&prob, &init, 50, 1e-7).unwrap());
    }
}

fn gw_restarts(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (a, b) = (cloud(&mut rng, 30, 3), cloud(&mut rng, 30, 2));
    let (da, db) = (pairwise_dist(&a, &a).unwrap(), pairwise_dist(&b, &b).unwrap());
    let solver = GwSolver {
        restarts: 16,
        cg: CgOptions::default(),
        seed: 0,
    };
    compare(c, "gw_restarts", 30, || solver.solve(&da, &db).unwrap().0);
}

fn regularizer_gradient(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (n0, n1, dim) = (150, 100, 10);
    let (x0, x1) = (cloud(&mut rng, n0, dim), cloud(&mut rng, n1, dim));
    let params = CfrParams::init(ModelShape::new(dim, [32, 16], 16).unwrap(), 0.0, false, 0).unwrap();
    let ctx = RegularizerContext::new(x0.clone(), x1.clone(), 0.9, false, RegularizerRecipe::FULL).unwrap();
    let plans = ctx.prepare(RegPlans::shared(&DenseMatrix::filled(n0, n1, 1.0 / (n0 * n1) as f64))).unwrap();
    let batch = FactualBatch::new(
        x0.iter().chain(&x1).take(64).cloned().collect(),
        (0..64).map(|i| u8::from(i >= n0)).collect(),
        (0..64).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    compare(c, "regularizer_step", n0 + n1, || {
        objective_and_gradient(&params, &batch, Some((&ctx, &plans)), 0.01, Mode::Eval).unwrap().0
    });
}

criterion_group!(kernels, dense_products, distances, fused_solve, gw_restarts, regularizer_gradient);
criterion_main!(kernels);
