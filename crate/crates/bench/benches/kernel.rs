//! Hot-path benchmarks: noise synthesis, one propagator application on both
//! routes, a full Euler solve, and a small factorization round trip.

use criterion::{criterion_group, criterion_main, Criterion};
use spde_core::campaign::seed_rng;
use spde_core::covariance::CovarianceModel;
use spde_core::factorization::{round_trip, FactorizationConfig, ReconstructionRule};
use spde_core::greens::{
    build_propagator, Coefficients, OperatorSpec, SpaceTimeFn, VariableCoefficients, Workspace,
};
use spde_core::noise::NoiseSampler;
use spde_core::solver::{euler_solve, Nonlinearity, SolutionField};
use spde_core::{SpatialGrid, TimeGrid};
use std::f64::consts::PI;
use std::sync::Arc;

fn noise_synthesis(c: &mut Criterion) {
    let grid = SpatialGrid::new(1, 256, 4.0).unwrap();
    let mut group = c.benchmark_group("noise_synthesis");
    for (name, model) in [
        ("white_256", CovarianceModel::White),
        ("riesz_256", CovarianceModel::Riesz { beta: 0.5 }),
    ] {
        let mut sampler = NoiseSampler::new(&grid, &model, 0.01).unwrap();
        let mut rng = seed_rng(1);
        group.bench_function(name, |b| b.iter(|| sampler.sample(&mut rng)));
    }
    group.finish();
}

fn variable_operator(period: f64) -> OperatorSpec {
    let sin_diff: SpaceTimeFn =
        Arc::new(move |_t, x: &[f64]| 1.0 + 0.5 * (2.0 * PI * x[0] / period).sin());
    let zero: SpaceTimeFn = Arc::new(|_, _: &[f64]| 0.0);
    OperatorSpec {
        coefficients: Coefficients::Variable(VariableCoefficients {
            diffusion: vec![sin_diff],
            drift: vec![zero.clone()],
            zeroth: zero,
        }),
        ellipticity: 0.5,
    }
}

fn propagator_apply(c: &mut Criterion) {
    let grid = SpatialGrid::new(1, 256, 4.0).unwrap();
    let time = TimeGrid::new(0.25, 64).unwrap();
    let spectral = build_propagator(&OperatorSpec::heat(1, 1.0), &grid, &time).unwrap();
    let cn = build_propagator(&variable_operator(grid.period()), &grid, &time).unwrap();

    let mut group = c.benchmark_group("propagator_apply");
    let mut ws = Workspace::new();
    let mut field = vec![1.0; grid.len()];
    group.bench_function("spectral_256", |b| {
        b.iter(|| spectral.apply_step(0, &mut field, &mut ws).unwrap())
    });
    let mut field = vec![1.0; grid.len()];
    group.bench_function("crank_nicolson_256", |b| {
        b.iter(|| cn.apply_step(0, &mut field, &mut ws).unwrap())
    });
    group.finish();
}

fn euler_path(c: &mut Criterion) {
    let grid = SpatialGrid::new(1, 128, 4.0).unwrap();
    let time = TimeGrid::new(0.25, 64).unwrap();
    let prop = build_propagator(&OperatorSpec::heat(1, 1.0), &grid, &time).unwrap();
    let u0 = vec![0.0; grid.len()];
    c.bench_function("euler_solve_128x64", |b| {
        let mut seed = 0u64;
        b.iter(|| {
            seed += 1;
            euler_solve(&prop, &Nonlinearity::additive(), &CovarianceModel::White, &u0, seed)
                .unwrap()
        })
    });
}

fn factorization_round_trip(c: &mut Criterion) {
    let grid = SpatialGrid::new(1, 64, 4.0).unwrap();
    let time = TimeGrid::new(0.25, 64).unwrap();
    let prop = build_propagator(&OperatorSpec::heat(1, 1.0), &grid, &time).unwrap();
    let model = CovarianceModel::Riesz { beta: 0.5 };
    let z = SolutionField::new(
        grid.clone(),
        time.clone(),
        vec![1.0; (time.steps() + 1) * grid.len()],
        0,
    )
    .unwrap();
    let mut sampler = NoiseSampler::new(&grid, &model, time.dt()).unwrap();
    let mut rng = seed_rng(7);
    let noise: Vec<Vec<f64>> = (0..time.steps()).map(|_| sampler.sample(&mut rng)).collect();
    let cfg = FactorizationConfig::new(0.315, 0.3, ReconstructionRule::RightEndpoint).unwrap();
    c.bench_function("round_trip_64x64", |b| {
        let mut ws = Workspace::new();
        b.iter(|| round_trip(&prop, &z, &noise, &cfg, &mut ws).unwrap())
    });
}

criterion_group!(benches, noise_synthesis, propagator_apply, euler_path, factorization_round_trip);
criterion_main!(benches);
