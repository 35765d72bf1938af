//! Shared fixtures for the benchmark targets.

use zvonkin_core::{CoefficientSet, FieldRank, SpaceTimeField, UniformGrid};

pub fn bench_grid(n_time: usize, n_space: usize) -> UniformGrid {
    UniformGrid::new(1, 0.0, 1.0, n_time, 6.0, n_space).unwrap()
}

pub fn wavy_field(grid: &UniformGrid) -> SpaceTimeField {
    SpaceTimeField::from_fn(grid, FieldRank::Scalar, |t, x, _| {
        (3.0 * x[0]).sin() * (1.0 + 0.5 * t)
    })
}

pub fn brownian_coeffs(grid: &UniformGrid) -> CoefficientSet {
    CoefficientSet::constant(1, 0.0, 1.0, grid).unwrap()
}
