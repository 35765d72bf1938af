//! Reproducible Brownian increments: one counter-based stream per path, so
//! path `j` sees the same noise regardless of ensemble size or thread
//! scheduling.

use ndarray::Array3;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{CoreError, Result};
use crate::grid::UniformGrid;

/// Descriptor from which any path's increments can be regenerated on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianSource {
    pub seed: u64,
    pub n_steps: usize,
    pub dim: usize,
    pub dt: f64,
}

impl BrownianSource {
    pub fn new(seed: u64, n_steps: usize, dim: usize, dt: f64) -> Self {
        Self {
            seed,
            n_steps,
            dim,
            dt,
        }
    }

    pub fn from_grid(seed: u64, grid: &UniformGrid) -> Self {
        Self::new(seed, grid.n_time, grid.dim, grid.dt())
    }

    /// Fill `out` (length `n_steps * dim`, step-major) with path `j`'s
    /// increments, `N(0, dt)` per component.
    pub fn fill_path(&self, path: usize, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.n_steps * self.dim);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(path as u64);
        let scale = self.dt.sqrt();
        for v in out.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = scale * z;
        }
    }

    /// Materialize the first `m` paths as a dense `(path, step, component)`
    /// array.
    pub fn dense(&self, m: usize) -> Array3<f64> {
        let mut arr = Array3::zeros((m, self.n_steps, self.dim));
        let mut buf = vec![0.0; self.n_steps * self.dim];
        for j in 0..m {
            self.fill_path(j, &mut buf);
            for k in 0..self.n_steps {
                for c in 0..self.dim {
                    arr[[j, k, c]] = buf[k * self.dim + c];
                }
            }
        }
        arr
    }
}

/// First- and second-moment sanity check on generated increments: the sample
/// mean per component must sit within four standard errors, and for at least
/// a million draws the sample variance must match `dt` within five percent.
pub fn verify_increment_moments(data: &Array3<f64>, dt: f64) -> Result<()> {
    let (m, n, d) = data.dim();
    let count = (m * n) as f64;
    for c in 0..d {
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for j in 0..m {
            for k in 0..n {
                let v = data[[j, k, c]];
                sum += v;
                sum2 += v * v;
            }
        }
        let mean = sum / count;
        let mean_bound = 4.0 * (dt / count).sqrt();
        if mean.abs() > mean_bound {
            return Err(CoreError::InvalidParams(format!(
                "increment mean check failed on component {c}: |{mean:.3e}| > {mean_bound:.3e}"
            )));
        }
        if m * n >= 1_000_000 {
            let var = sum2 / count - mean * mean;
            if (var - dt).abs() > 0.05 * dt {
                return Err(CoreError::InvalidParams(format!(
                    "increment variance check failed on component {c}: {var:.6e} vs dt {dt:.6e}"
                )));
            }
        }
    }
    Ok(())
}

/// Generate `m` paths of increments on the grid's time steps, verified by the
/// moment checks above.
pub fn generate_brownian(m: usize, grid: &UniformGrid, seed: u64) -> Result<Array3<f64>> {
    if m < 1 {
        return Err(CoreError::InvalidParams("need at least one path".into()));
    }
    let source = BrownianSource::from_grid(seed, grid);
    let data = source.dense(m);
    verify_increment_moments(&data, grid.dt())?;
    Ok(data)
}
