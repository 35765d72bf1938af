//! Uniform space-time grids on a box `[center-L, center+L]^d x [t_start, t_end]`.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Fraction of the half-width kept as the region of interest. Verdicts and
/// sup-measurements only read points at least `(1 - ROI_FRACTION) * L` away
/// from the spatial boundary.
pub const ROI_FRACTION: f64 = 0.8;

/// Uniform tensor grid in one or two spatial dimensions plus time.
///
/// Spatial axes share the same half-width `half_width` (centered at `center`)
/// and point count `n_space`; spacing is `h = 2L/(n_space-1)`. Time runs from
/// `t_start` to `t_end` in `n_time` equal steps, so there are `n_time + 1`
/// time slices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformGrid {
    pub dim: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub n_time: usize,
    pub half_width: f64,
    pub center: f64,
    pub n_space: usize,
}

impl UniformGrid {
    pub fn new(
        dim: usize,
        t_start: f64,
        t_end: f64,
        n_time: usize,
        half_width: f64,
        n_space: usize,
    ) -> Result<Self> {
        Self::with_center(dim, t_start, t_end, n_time, half_width, 0.0, n_space)
    }

    pub fn with_center(
        dim: usize,
        t_start: f64,
        t_end: f64,
        n_time: usize,
        half_width: f64,
        center: f64,
        n_space: usize,
    ) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(CoreError::InvalidGrid(format!(
                "dim must be 1 or 2, got {dim}"
            )));
        }
        if !(t_end > t_start) {
            return Err(CoreError::InvalidGrid(format!(
                "t_end ({t_end}) must exceed t_start ({t_start})"
            )));
        }
        if n_time < 1 {
            return Err(CoreError::InvalidGrid("n_time must be >= 1".into()));
        }
        if n_space < 2 {
            return Err(CoreError::InvalidGrid("n_space must be >= 2".into()));
        }
        if !(half_width > 0.0) {
            return Err(CoreError::InvalidGrid(format!(
                "half_width must be positive, got {half_width}"
            )));
        }
        let grid = Self {
            dim,
            t_start,
            t_end,
            n_time,
            half_width,
            center,
            n_space,
        };
        debug_assert!(grid.h() > 0.0 && grid.dt() > 0.0);
        Ok(grid)
    }

    /// Spatial spacing.
    pub fn h(&self) -> f64 {
        2.0 * self.half_width / (self.n_space as f64 - 1.0)
    }

    /// Time step.
    pub fn dt(&self) -> f64 {
        (self.t_end - self.t_start) / self.n_time as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t_start + k as f64 * self.dt()
    }

    pub fn n_slices(&self) -> usize {
        self.n_time + 1
    }

    /// Coordinate of spatial index `i` along any axis.
    pub fn coord(&self, i: usize) -> f64 {
        self.center - self.half_width + i as f64 * self.h()
    }

    pub fn lo(&self) -> f64 {
        self.center - self.half_width
    }

    pub fn hi(&self) -> f64 {
        self.center + self.half_width
    }

    /// Total spatial points: `n_space^dim`.
    pub fn n_points(&self) -> usize {
        self.n_space.pow(self.dim as u32)
    }

    /// Flatten a spatial multi-index (row-major, x slowest).
    pub fn flat(&self, idx: &[usize]) -> usize {
        match self.dim {
            1 => idx[0],
            2 => idx[0] * self.n_space + idx[1],
            _ => unreachable!(),
        }
    }

    /// Inverse of [`flat`](Self::flat).
    pub fn unflat(&self, flat: usize) -> [usize; 2] {
        match self.dim {
            1 => [flat, 0],
            2 => [flat / self.n_space, flat % self.n_space],
            _ => unreachable!(),
        }
    }

    pub fn point(&self, flat: usize) -> [f64; 2] {
        let idx = self.unflat(flat);
        match self.dim {
            1 => [self.coord(idx[0]), 0.0],
            2 => [self.coord(idx[0]), self.coord(idx[1])],
            _ => unreachable!(),
        }
    }

    /// Whether the point lies in the region of interest (all coordinates at
    /// most `ROI_FRACTION * half_width` from the center).
    pub fn in_roi(&self, x: &[f64]) -> bool {
        let r = ROI_FRACTION * self.half_width;
        x.iter().take(self.dim).all(|&c| (c - self.center).abs() <= r)
    }

    /// Whether the point lies inside the box (closed).
    pub fn in_box(&self, x: &[f64]) -> bool {
        x.iter()
            .take(self.dim)
            .all(|&c| c >= self.lo() && c <= self.hi())
    }

    /// Spatial index range `[lo, hi]` (inclusive) of grid lines inside the ROI.
    pub fn roi_index_range(&self) -> (usize, usize) {
        let r = ROI_FRACTION * self.half_width;
        let lo = ((self.center - r) - self.lo()) / self.h();
        let hi = ((self.center + r) - self.lo()) / self.h();
        (lo.ceil() as usize, (hi.floor() as usize).min(self.n_space - 1))
    }

    /// Nearest time-slice index with `time(k) <= t` (clamped); evaluation in
    /// time is left-constant on `[t_k, t_{k+1})`, with `t = t_end` mapped to
    /// the final slice. Times within a relative 1e-9 of a node snap to it so
    /// that rebuilding `t_start + k * dt` in floating point stays on slice k.
    pub fn time_slice(&self, t: f64) -> usize {
        let s = (t - self.t_start) / self.dt();
        if s <= 0.0 {
            return 0;
        }
        let snapped = if (s - s.round()).abs() < 1e-9 {
            s.round()
        } else {
            s.floor()
        };
        (snapped as usize).min(self.n_time)
    }

    /// Sub-grid over the time window `[time(k_lo), time(k_hi)]` with the same
    /// spatial layout and step sizes.
    pub fn time_window(&self, k_lo: usize, k_hi: usize) -> Result<UniformGrid> {
        if k_lo >= k_hi || k_hi > self.n_time {
            return Err(CoreError::InvalidGrid(format!(
                "bad time window indices [{k_lo}, {k_hi}] for n_time={}",
                self.n_time
            )));
        }
        UniformGrid::with_center(
            self.dim,
            self.time(k_lo),
            self.time(k_hi),
            k_hi - k_lo,
            self.half_width,
            self.center,
            self.n_space,
        )
    }
}
