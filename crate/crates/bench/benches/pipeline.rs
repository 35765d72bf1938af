use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use zvonkin_bench::{bench_grid, brownian_coeffs, wavy_field};
use zvonkin_core::{
    build_segment, euler_direct, inverse_map, maximal_function, mixed_norm, mollify,
    partition, solve_backward, zvonkin_simulate, BrownianSource, CoefficientSet, FieldRank,
    MixedNormParams, PdeProblem, Scheme, SegmentOutcome, SimOptions, SpaceTimeField,
};

fn bench_field_ops(c: &mut Criterion) {
    let grid = bench_grid(64, 601);
    let field = wavy_field(&grid);
    let params = MixedNormParams::new(4.0, 8.0, 0.0, 1.0).unwrap();

    c.bench_function("mixed_norm 64x601", |b| {
        b.iter(|| mixed_norm(black_box(&field), black_box(&params)).unwrap())
    });
    c.bench_function("mollify n=16 64x601", |b| {
        b.iter(|| mollify(black_box(&field), 16).unwrap())
    });

    let slice_grid = bench_grid(1, 1201);
    let slice_field = wavy_field(&slice_grid);
    c.bench_function("maximal_function 1201", |b| {
        b.iter(|| maximal_function(black_box(&slice_field)).unwrap())
    });
}

fn bench_backward_solve(c: &mut Criterion) {
    let grid = bench_grid(500, 401);
    let coeffs = brownian_coeffs(&grid);
    let source = SpaceTimeField::from_fn(&grid, FieldRank::Scalar, |t, x, _| {
        (1.0 + t) * x[0].sin()
    });
    c.bench_function("solve_backward 500x401", |b| {
        b.iter_batched(
            || PdeProblem::new(coeffs.clone(), source.clone(), 4.0, 8.0).unwrap(),
            |p| solve_backward(&p, Scheme::ImplicitEuler).unwrap(),
            BatchSize::LargeInput,
        )
    });
}

fn bench_stepping(c: &mut Criterion) {
    let grid = bench_grid(1000, 401);
    let coeffs = brownian_coeffs(&grid);
    let src = BrownianSource::from_grid(7, &grid);
    let opts = SimOptions {
        retain_increments: false,
        ..Default::default()
    };
    c.bench_function("euler_direct 1000 paths x 1000 steps", |b| {
        b.iter(|| {
            euler_direct(
                black_box(&coeffs),
                &[0.0],
                &grid,
                &src,
                1000,
                &opts,
            )
            .unwrap()
        })
    });

    let drift_coeffs = CoefficientSet::constant(1, 0.4, 1.0, &grid).unwrap();
    let chain = partition(&drift_coeffs, &grid, 4.0, 8.0, Scheme::ImplicitEuler).unwrap();
    c.bench_function("zvonkin_simulate 1000 paths x 1000 steps", |b| {
        b.iter(|| {
            zvonkin_simulate(
                black_box(&chain),
                &drift_coeffs,
                &[0.0],
                &src,
                1000,
                &opts,
            )
            .unwrap()
        })
    });
}

fn bench_inverse_map(c: &mut Criterion) {
    let grid = bench_grid(200, 801);
    let coeffs = CoefficientSet::constant(1, 0.5, 1.0, &grid).unwrap();
    let seg = match build_segment(&coeffs, &grid, 4.0, 8.0, Scheme::ImplicitEuler).unwrap() {
        SegmentOutcome::Accepted(s) => s,
        SegmentOutcome::Refused { .. } => unreachable!(),
    };
    c.bench_function("inverse_map batch of 1000", |b| {
        b.iter(|| {
            let mut x = [0.0];
            for i in 0..1000 {
                let y = -4.0 + 0.008 * i as f64;
                inverse_map(black_box(&seg), 0.37, &[y], &mut x).unwrap();
                black_box(x[0]);
            }
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_field_ops, bench_backward_solve, bench_stepping, bench_inverse_map
}
criterion_main!(benches);
