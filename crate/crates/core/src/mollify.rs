//! Discrete mollification by a compactly supported bump kernel.
//!
//! The space-time kernel lives on the unit ball of R^{d+1} and is rescaled to
//! radius `1/n`; discretized weights are renormalized to unit mass, so
//! constants are reproduced exactly. Fields are extended flat in space, and in
//! time by the terminal-zero / initial-flat convention (zero past the final
//! slice, frozen initial slice before the first), which matches how backward
//! solutions with vanishing terminal data are extended. Near the final time
//! the zero extension bleeds in; callers that need constancy there should use
//! [`mollify_spatial`], which convolves slice by slice.

use rayon::prelude::*;

use crate::error::{CoreError, Result};
use crate::field::SpaceTimeField;

/// Standard bump: `exp(1 - 1/(1-r^2))` for `r < 1`, zero outside.
fn bump(r2: f64) -> f64 {
    if r2 < 1.0 {
        (1.0 - 1.0 / (1.0 - r2)).exp()
    } else {
        0.0
    }
}

struct Stencil {
    /// (time offset, axis offsets, weight), weights summing to one.
    taps: Vec<(isize, [isize; 2], f64)>,
}

fn build_stencil(
    dim: usize,
    h: f64,
    dt: Option<f64>,
    radius: f64,
) -> Result<Stencil> {
    let reach_x = (radius / h).floor() as isize;
    let reach_t = dt.map(|dt| (radius / dt).floor() as isize).unwrap_or(0);
    if reach_x < 1 || (dt.is_some() && reach_t < 1) {
        return Err(CoreError::KernelTooNarrow {
            radius,
            h,
            dt: dt.unwrap_or(0.0),
        });
    }
    let mut taps = Vec::new();
    let mut mass = 0.0;
    let t_range = if dt.is_some() { -reach_t..=reach_t } else { 0..=0 };
    for kt in t_range {
        let tt = dt.map(|dt| kt as f64 * dt / radius).unwrap_or(0.0);
        for ix in -reach_x..=reach_x {
            let xx = ix as f64 * h / radius;
            if dim == 1 {
                let w = bump(tt * tt + xx * xx);
                if w > 0.0 {
                    taps.push((kt, [ix, 0], w));
                    mass += w;
                }
            } else {
                for iy in -reach_x..=reach_x {
                    let yy = iy as f64 * h / radius;
                    let w = bump(tt * tt + xx * xx + yy * yy);
                    if w > 0.0 {
                        taps.push((kt, [ix, iy], w));
                        mass += w;
                    }
                }
            }
        }
    }
    if taps.is_empty() || mass <= 0.0 {
        return Err(CoreError::KernelTooNarrow {
            radius,
            h,
            dt: dt.unwrap_or(0.0),
        });
    }
    for t in &mut taps {
        t.2 /= mass;
    }
    Ok(Stencil { taps })
}

fn convolve(f: &SpaceTimeField, stencil: &Stencil, spatial_only: bool) -> SpaceTimeField {
    let grid = f.grid().clone();
    let n_slices = grid.n_slices();
    let n_pts = grid.n_points();
    let nc = f.n_components();
    let n = grid.n_space as isize;
    let mut out = SpaceTimeField::zeros(&grid, f.rank());

    // Value with clamped spatial extension and the time extension convention.
    let sample = |k: isize, ix: isize, iy: isize, c: usize| -> f64 {
        if !spatial_only && k > grid.n_time as isize {
            return 0.0;
        }
        let k = k.clamp(0, grid.n_time as isize) as usize;
        let ix = ix.clamp(0, n - 1) as usize;
        let iy = iy.clamp(0, n - 1) as usize;
        let flat = if grid.dim == 1 { ix } else { grid.flat(&[ix, iy]) };
        f.at(k, flat, c)
    };

    let slices: Vec<Vec<f64>> = (0..n_slices)
        .into_par_iter()
        .map(|k| {
            let mut buf = vec![0.0; n_pts * nc];
            for p in 0..n_pts {
                let idx = grid.unflat(p);
                for c in 0..nc {
                    let mut acc = 0.0;
                    for &(kt, off, w) in &stencil.taps {
                        acc += w
                            * sample(
                                k as isize + kt,
                                idx[0] as isize + off[0],
                                idx[1] as isize + off[1],
                                c,
                            );
                    }
                    buf[p * nc + c] = acc;
                }
            }
            buf
        })
        .collect();
    for (k, buf) in slices.into_iter().enumerate() {
        out.slice_mut(k).copy_from_slice(&buf);
    }
    out
}

/// Space-time mollification with bandwidth index `n` (kernel radius `1/n`).
pub fn mollify(f: &SpaceTimeField, n: usize) -> Result<SpaceTimeField> {
    if n < 1 {
        return Err(CoreError::InvalidParams("bandwidth index must be >= 1".into()));
    }
    let grid = f.grid();
    let stencil = build_stencil(grid.dim, grid.h(), Some(grid.dt()), 1.0 / n as f64)?;
    Ok(convolve(f, &stencil, false))
}

/// Slice-wise spatial mollification with kernel radius `radius`. Used to
/// smooth rough coefficients without touching the time axis.
pub fn mollify_spatial(f: &SpaceTimeField, radius: f64) -> Result<SpaceTimeField> {
    if !(radius > 0.0) {
        return Err(CoreError::InvalidParams("kernel radius must be positive".into()));
    }
    let grid = f.grid();
    let stencil = build_stencil(grid.dim, grid.h(), None, radius)?;
    Ok(convolve(f, &stencil, true))
}

/// Total mass of the discretized kernel (diagnostic; unity by construction).
pub fn kernel_mass(dim: usize, h: f64, dt: f64, n: usize) -> Result<f64> {
    let stencil = build_stencil(dim, h, Some(dt), 1.0 / n as f64)?;
    Ok(stencil.taps.iter().map(|t| t.2).sum())
}
