//! Mixed space-time norms, Sobolev slice norms, and the integrability
//! exponent condition.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::field::SpaceTimeField;
use crate::grid::UniformGrid;

/// Parameters of the mixed norm: spatial exponent `p`, temporal exponent `q`,
/// and the time window `[s, t]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixedNormParams {
    pub p: f64,
    pub q: f64,
    pub s: f64,
    pub t: f64,
}

impl MixedNormParams {
    pub fn new(p: f64, q: f64, s: f64, t: f64) -> Result<Self> {
        if !(p > 1.0 && p.is_finite() && q > 1.0 && q.is_finite()) {
            return Err(CoreError::InvalidParams(format!(
                "exponents must lie in (1, inf), got p={p}, q={q}"
            )));
        }
        if !(s >= 0.0 && t > s) {
            return Err(CoreError::InvalidParams(format!(
                "need 0 <= S < T, got S={s}, T={t}"
            )));
        }
        Ok(Self { p, q, s, t })
    }
}

/// Strict exponent gap `threshold - (d/p + 2/q)`; the condition holds iff the
/// gap is positive.
pub fn exponent_gap(d: usize, p: f64, q: f64, threshold: f64) -> f64 {
    threshold - (d as f64 / p + 2.0 / q)
}

/// Check `d/p + 2/q < threshold` strictly. `threshold` is 1 for merely
/// integrable drifts and 2 for bounded drifts.
pub fn check_exponents(d: usize, p: f64, q: f64, threshold: f64) -> Result<bool> {
    if d < 1 {
        return Err(CoreError::InvalidParams("dimension must be >= 1".into()));
    }
    if !(p > 1.0) || !(q > 1.0) {
        return Err(CoreError::InvalidParams(format!(
            "exponents must exceed 1, got p={p}, q={q}"
        )));
    }
    if threshold != 1.0 && threshold != 2.0 {
        return Err(CoreError::InvalidParams(format!(
            "threshold must be 1 or 2, got {threshold}"
        )));
    }
    Ok(exponent_gap(d, p, q, threshold) > 0.0)
}

/// Trapezoid weights over the spatial box for one axis.
fn axis_weights(grid: &UniformGrid) -> Vec<f64> {
    let h = grid.h();
    let n = grid.n_space;
    let mut w = vec![h; n];
    w[0] = 0.5 * h;
    w[n - 1] = 0.5 * h;
    w
}

/// `integral of g over the box` by the tensor trapezoid rule, where `g(flat)`
/// gives the integrand at spatial index `flat`.
pub(crate) fn box_integral(grid: &UniformGrid, g: impl Fn(usize) -> f64) -> f64 {
    let wx = axis_weights(grid);
    match grid.dim {
        1 => (0..grid.n_space).map(|i| wx[i] * g(i)).sum(),
        2 => {
            let mut acc = 0.0;
            for i in 0..grid.n_space {
                let mut row = 0.0;
                for j in 0..grid.n_space {
                    row += wx[j] * g(grid.flat(&[i, j]));
                }
                acc += wx[i] * row;
            }
            acc
        }
        _ => unreachable!(),
    }
}

/// Spatial L^p norm of the pointwise component magnitude on one time slice.
fn slice_lp(f: &SpaceTimeField, k: usize, p: f64) -> f64 {
    let nc = f.n_components();
    box_integral(f.grid(), |flat| {
        let m2: f64 = (0..nc).map(|c| f.at(k, flat, c).powi(2)).sum();
        m2.sqrt().powf(p)
    })
    .powf(1.0 / p)
}

/// Mixed norm `( int_S^T ( int |f|^p dx )^{q/p} dt )^{1/q}` by the trapezoid
/// rule in both space and time over the grid box. Fractional window ends are
/// handled by an extra sample at S and T (fields are left-constant in time).
pub fn mixed_norm(f: &SpaceTimeField, params: &MixedNormParams) -> Result<f64> {
    let grid = f.grid();
    let eps = 1e-9 * grid.dt();
    if params.s < grid.t_start - eps || params.t > grid.t_end + eps {
        return Err(CoreError::InvalidParams(format!(
            "window [{}, {}] outside grid time range [{}, {}]",
            params.s, params.t, grid.t_start, grid.t_end
        )));
    }
    // Sample times: S, T, and every grid time strictly between.
    let mut times = vec![params.s];
    for k in 0..grid.n_slices() {
        let t = grid.time(k);
        if t > params.s + eps && t < params.t - eps {
            times.push(t);
        }
    }
    times.push(params.t);

    let g_at = |t: f64| -> f64 {
        let k = grid.time_slice(t);
        slice_lp(f, k, params.p).powf(params.q)
    };
    let mut acc = 0.0;
    for w in times.windows(2) {
        let (a, b) = (w[0], w[1]);
        acc += 0.5 * (b - a) * (g_at(a) + g_at(b));
    }
    Ok(acc.powf(1.0 / params.q))
}

/// Sobolev norm of order `m <= 2` at time slice nearest to `t`: the sum of
/// the L^p norms of the field and its first `m` gradient magnitudes, with
/// stencil derivatives (central inside, one-sided at the box edges).
pub fn sobolev_norm(f: &SpaceTimeField, m: usize, p: f64, t: f64) -> Result<f64> {
    if m > 2 {
        return Err(CoreError::InvalidParams(format!(
            "sobolev order must be <= 2, got {m}"
        )));
    }
    if !(p > 1.0) {
        return Err(CoreError::InvalidParams(format!("need p > 1, got {p}")));
    }
    let grid = f.grid();
    if t < grid.t_start - 1e-12 || t > grid.t_end + 1e-12 {
        return Err(CoreError::InvalidParams(format!(
            "time {t} outside grid range [{}, {}]",
            grid.t_start, grid.t_end
        )));
    }
    let k = grid.time_slice(t);
    let mut total = slice_lp(f, k, p);
    if m >= 1 {
        let g1 = f.gradient()?;
        total += slice_lp(&g1, k, p);
        if m >= 2 {
            let g2 = g1.gradient();
            match g2 {
                Ok(g2) => total += slice_lp(&g2, k, p),
                Err(_) => {
                    // Jacobian of a vector field is already a matrix; take the
                    // second derivatives component-wise instead.
                    let nc = f.n_components();
                    let d = grid.dim;
                    let hess_mag = |flat: usize| -> f64 {
                        let mut s = 0.0;
                        for c in 0..nc {
                            for a in 0..d {
                                s += f.second_derivative_at(k, flat, c, a).powi(2);
                            }
                            if d == 2 {
                                s += 2.0 * f.cross_derivative_at(k, flat, c).powi(2);
                            }
                        }
                        s.sqrt().powf(p)
                    };
                    total += box_integral(grid, hess_mag).powf(1.0 / p);
                }
            }
        }
    }
    Ok(total)
}
