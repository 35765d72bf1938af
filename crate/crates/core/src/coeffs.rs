//! Drift and diffusion coefficient pairs, either analytic callbacks or
//! grid-sampled fields, with ellipticity bounds checked on a sample sweep.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::field::{FieldRank, SpaceTimeField};
use crate::grid::UniformGrid;
use crate::mollify::mollify_spatial;

/// Vector-valued callback writing `dim` components.
pub type VectorFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
/// Matrix-valued callback writing `dim * dim` components row-major.
pub type MatrixFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

#[derive(Clone)]
pub enum DriftSpec {
    Analytic(VectorFn),
    Sampled(SpaceTimeField),
}

#[derive(Clone)]
pub enum SigmaSpec {
    Analytic(MatrixFn),
    Sampled(SpaceTimeField),
}

impl std::fmt::Debug for DriftSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DriftSpec::Analytic(_) => write!(f, "DriftSpec::Analytic"),
            DriftSpec::Sampled(_) => write!(f, "DriftSpec::Sampled"),
        }
    }
}

impl std::fmt::Debug for SigmaSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SigmaSpec::Analytic(_) => write!(f, "SigmaSpec::Analytic"),
            SigmaSpec::Sampled(_) => write!(f, "SigmaSpec::Sampled"),
        }
    }
}

/// Drift `b` and diffusion `sigma` with uniform ellipticity bounds
/// `lower |lambda|^2 <= |sigma^T lambda|^2 <= upper |lambda|^2`.
#[derive(Clone, Debug)]
pub struct CoefficientSet {
    pub dim: usize,
    pub drift: DriftSpec,
    pub sigma: SigmaSpec,
    pub ellipticity_lower: f64,
    pub ellipticity_upper: f64,
}

/// How to turn raw coefficients into bounded grid fields before a solve.
#[derive(Debug, Clone, Copy)]
pub struct PrepOptions {
    /// Cap on the drift vector norm; `None` keeps raw values.
    pub drift_cap: Option<f64>,
    /// Spatial mollification radius applied after capping; `None` skips.
    pub mollify_radius: Option<f64>,
}

impl PrepOptions {
    /// Grid-tied defaults: cap `scale / sqrt(h)` and kernel radius `2h`.
    pub fn tied_to_grid(grid: &UniformGrid, scale: f64) -> Self {
        let h = grid.h();
        Self {
            drift_cap: Some(scale / h.sqrt()),
            mollify_radius: Some(2.0 * h),
        }
    }

    pub fn none() -> Self {
        Self {
            drift_cap: None,
            mollify_radius: None,
        }
    }
}

impl CoefficientSet {
    /// Build and verify the ellipticity bounds on a sample sweep over the
    /// given grid (a handful of slices, grid nodes, and random directions).
    pub fn new(
        dim: usize,
        drift: DriftSpec,
        sigma: SigmaSpec,
        ellipticity_lower: f64,
        ellipticity_upper: f64,
        check_grid: &UniformGrid,
    ) -> Result<Self> {
        if !(ellipticity_lower > 0.0 && ellipticity_upper >= ellipticity_lower) {
            return Err(CoreError::InvalidParams(format!(
                "need 0 < lower <= upper, got {ellipticity_lower}, {ellipticity_upper}"
            )));
        }
        let set = Self {
            dim,
            drift,
            sigma,
            ellipticity_lower,
            ellipticity_upper,
        };
        set.verify_ellipticity(check_grid, 64, 0x5eed)?;
        Ok(set)
    }

    /// Constant drift `b` and isotropic diffusion `sigma0 * I`.
    pub fn constant(dim: usize, b: f64, sigma0: f64, check_grid: &UniformGrid) -> Result<Self> {
        let drift: VectorFn = Arc::new(move |_t, _x, out| out.fill(b));
        let s2 = sigma0 * sigma0;
        let sig: MatrixFn = Arc::new(move |_t, _x, out| {
            out.fill(0.0);
            for i in 0..dim {
                out[i * dim + i] = sigma0;
            }
        });
        Self::new(
            dim,
            DriftSpec::Analytic(drift),
            SigmaSpec::Analytic(sig),
            s2,
            s2,
            check_grid,
        )
    }

    pub fn drift_at(&self, t: f64, x: &[f64], out: &mut [f64]) {
        match &self.drift {
            DriftSpec::Analytic(f) => f(t, x, out),
            DriftSpec::Sampled(field) => field.eval_all(t, x, out),
        }
    }

    pub fn sigma_at(&self, t: f64, x: &[f64], out: &mut [f64]) {
        match &self.sigma {
            SigmaSpec::Analytic(f) => f(t, x, out),
            SigmaSpec::Sampled(field) => field.eval_all(t, x, out),
        }
    }

    pub fn is_fully_analytic(&self) -> bool {
        matches!(self.drift, DriftSpec::Analytic(_)) && matches!(self.sigma, SigmaSpec::Analytic(_))
    }

    /// Check the ellipticity sandwich at sampled `(t, x, lambda)` triples.
    pub fn verify_ellipticity(
        &self,
        grid: &UniformGrid,
        n_samples: usize,
        seed: u64,
    ) -> Result<()> {
        let d = self.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sig = vec![0.0; d * d];
        let slack = 1e-9 * self.ellipticity_upper.max(1.0);
        let mut lambdas: Vec<Vec<f64>> = (0..d)
            .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        for _ in 0..4 {
            let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 1e-6 {
                lambdas.push(v.iter().map(|a| a / norm).collect());
            }
        }
        for _ in 0..n_samples {
            let t = rng.gen_range(grid.t_start..=grid.t_end);
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(grid.lo()..=grid.hi())).collect();
            self.sigma_at(t, &x, &mut sig);
            for lambda in &lambdas {
                // (sigma^T lambda)_k = sum_i sigma[i,k] lambda_i
                let mut w2 = 0.0;
                for k in 0..d {
                    let mut wk = 0.0;
                    for i in 0..d {
                        wk += sig[i * d + k] * lambda[i];
                    }
                    w2 += wk * wk;
                }
                let l2: f64 = lambda.iter().map(|a| a * a).sum();
                if w2 < self.ellipticity_lower * l2 - slack
                    || w2 > self.ellipticity_upper * l2 + slack
                {
                    return Err(CoreError::EllipticityViolated {
                        t,
                        x,
                        observed: w2 / l2,
                        lower: self.ellipticity_lower,
                        upper: self.ellipticity_upper,
                    });
                }
            }
        }
        Ok(())
    }

    /// Sample both coefficients onto the grid, capping the drift norm and
    /// optionally mollifying in space. The result is field-backed and bounded,
    /// suitable for the backward solves and for drift-frozen simulation.
    pub fn prepared(&self, grid: &UniformGrid, opts: PrepOptions) -> Result<CoefficientSet> {
        let d = self.dim;
        let mut buf = vec![0.0; d.max(d * d)];

        let mut b_field = SpaceTimeField::zeros(grid, FieldRank::Vector);
        for k in 0..grid.n_slices() {
            let t = grid.time(k);
            for p in 0..grid.n_points() {
                let x = grid.point(p);
                self.drift_at(t, &x[..d], &mut buf[..d]);
                if let Some(cap) = opts.drift_cap {
                    let norm = buf[..d].iter().map(|v| v * v).sum::<f64>().sqrt();
                    if !norm.is_finite() {
                        // A singular node: clamp each component to the cap.
                        for v in &mut buf[..d] {
                            *v = if v.is_finite() { *v } else { cap * v.signum() };
                        }
                    } else if norm > cap {
                        for v in &mut buf[..d] {
                            *v *= cap / norm;
                        }
                    }
                }
                for c in 0..d {
                    b_field.set(k, p, c, buf[c]);
                }
            }
        }
        if let Some(r) = opts.mollify_radius {
            b_field = mollify_spatial(&b_field, r)?;
        }
        if !b_field.all_finite() {
            return Err(CoreError::InvalidField(
                "sampled drift contains non-finite values; set a drift cap".into(),
            ));
        }

        let mut s_field = SpaceTimeField::zeros(grid, FieldRank::Matrix);
        for k in 0..grid.n_slices() {
            let t = grid.time(k);
            for p in 0..grid.n_points() {
                let x = grid.point(p);
                self.sigma_at(t, &x[..d], &mut buf[..d * d]);
                for c in 0..d * d {
                    s_field.set(k, p, c, buf[c]);
                }
            }
        }

        let set = CoefficientSet {
            dim: d,
            drift: DriftSpec::Sampled(b_field),
            sigma: SigmaSpec::Sampled(s_field),
            ellipticity_lower: self.ellipticity_lower,
            ellipticity_upper: self.ellipticity_upper,
        };
        set.verify_ellipticity(grid, 64, 0x5eed)?;
        Ok(set)
    }

    /// Sup of the Frobenius norm of sigma over a grid sample.
    pub fn sup_sigma_norm(&self, grid: &UniformGrid) -> f64 {
        let d = self.dim;
        let mut buf = vec![0.0; d * d];
        let mut sup: f64 = 0.0;
        for k in 0..grid.n_slices() {
            let t = grid.time(k);
            for p in 0..grid.n_points() {
                let x = grid.point(p);
                self.sigma_at(t, &x[..d], &mut buf);
                let fro = buf.iter().map(|v| v * v).sum::<f64>().sqrt();
                sup = sup.max(fro);
            }
        }
        sup
    }
}
