//! Hot-path benchmarks: polynomial kernels, coefficient-path integration,
//! and the per-query cost of boundary value solving.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use gfbvp::dynamics::{HamiltonianModel, ReferenceTrajectory};
use gfbvp::hj::solve_gf;
use gfbvp::partition::GfKind;
use gfbvp::poly::TruncatedPolynomial;
use gfbvp::tpbvp::{solve_bvp, BvpSpec, SolveOptions};

fn random_poly(nvars: usize, degree: usize, seed: u64) -> TruncatedPolynomial {
    let len = gfbvp::poly::basis(nvars, degree).len();
    let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
    let coeffs: Vec<f64> = (0..len)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state as f64 / u64::MAX as f64) - 0.5
        })
        .collect();
    TruncatedPolynomial::from_coeffs(nvars, degree, coeffs)
}

fn poly_kernels(c: &mut Criterion) {
    let a = random_poly(4, 6, 1);
    let b = random_poly(4, 6, 2);
    c.bench_function("poly mul 4 vars deg 6", |bench| {
        bench.iter(|| a.mul_truncated(&b).unwrap())
    });

    let subs: Vec<TruncatedPolynomial> = (1..=4).map(|s| {
        let mut p = random_poly(4, 6, 100 + s);
        p.coeffs_mut()[0] = 0.0;
        p
    })
    .collect();
    c.bench_function("poly compose 4 vars deg 6", |bench| {
        bench.iter(|| a.compose(&subs).unwrap())
    });

    c.bench_function("poly gradient eval", |bench| {
        let x = [0.01, -0.02, 0.005, 0.015];
        bench.iter(|| a.eval_gradient(&x))
    });
}

fn hill_artifacts(c: &mut Criterion) {
    let model = HamiltonianModel::hill();
    let l2 = model.libration_points().unwrap()[1].clone();
    let reference =
        ReferenceTrajectory::equilibrium(model.clone(), &l2, 0.0, 1.2, "L2").unwrap();

    let mut group = c.benchmark_group("coefficient path");
    group.sample_size(10);
    for order in [2usize, 4] {
        group.bench_function(format!("solve order {order} span 1.2"), |bench| {
            bench.iter_batched(
                || (),
                |_| {
                    solve_gf(
                        &model,
                        &reference,
                        &GfKind::F2.partition(2),
                        order,
                        0.0,
                        1.2,
                        1e-10,
                    )
                    .unwrap()
                },
                BatchSize::PerIteration,
            )
        });
    }
    group.finish();

    let gf = solve_gf(&model, &reference, &GfKind::F2.partition(2), 4, 0.0, 1.2, 1e-11).unwrap();
    let spec = BvpSpec {
        partition: GfKind::F2.partition(2),
        endpoint1: vec![1e-3, -0.5e-3],
        endpoint0: vec![0.3e-3, 0.8e-3],
        transfer_time: 1.0,
    };
    let opts = SolveOptions::without_verification();
    c.bench_function("bvp solve (no verification)", |bench| {
        bench.iter(|| solve_bvp(&gf, &spec, &opts).unwrap())
    });
}

criterion_group!(benches, poly_kernels, hill_artifacts);
criterion_main!(benches);
