//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("exponent condition failed: d/p + 2/q = {value} is not < {threshold}")]
    ExponentCondition { value: f64, threshold: f64 },

    #[error("ellipticity bounds violated at t={t}, x={x:?}: |sigma^T lambda|^2 = {observed}, admissible range [{lower}, {upper}]")]
    EllipticityViolated {
        t: f64,
        x: Vec<f64>,
        observed: f64,
        lower: f64,
        upper: f64,
    },

    #[error("mollifier bandwidth too narrow: radius {radius} does not span one grid cell (h={h}, dt={dt})")]
    KernelTooNarrow { radius: f64, h: f64, dt: f64 },

    #[error("linear solve failed at step {step} (t={t}), position {position}: {detail}")]
    LinearSolveFailure {
        step: usize,
        t: f64,
        position: usize,
        detail: String,
    },

    #[error("non-finite value detected at time step {step} (t={t})")]
    NanDetected { step: usize, t: f64 },

    #[error("window floor reached on [{start}, {end}]: sup|grad u| = {sup_grad} still exceeds 1/2 at the minimum window of {min_width}")]
    MinimumWindowReached {
        start: f64,
        end: f64,
        sup_grad: f64,
        min_width: f64,
    },

    #[error("inverse map failed to converge in segment {segment} at t={t}, target {target:?}")]
    InversionFailure {
        segment: usize,
        t: f64,
        target: Vec<f64>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
