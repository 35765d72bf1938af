//! Backward parabolic solves `d_t u + L_t u + f = 0`, `u(T, .) = 0` on the
//! grid box with homogeneous Dirichlet walls, where
//! `L_t u = 1/2 (sigma sigma^T)^{ij} d_i d_j u + b^i d_i u`.
//!
//! Marching is backward in time. In one dimension each step is a banded
//! direct solve; in two dimensions a fixed two-sweep alternating-direction
//! schedule (x-implicit then y-implicit, cross term explicit). The source is
//! taken at the already-known time level for the implicit-Euler scheme so the
//! scheme's first-order behavior in the time step is genuine and measurable;
//! Crank-Nicolson averages the two levels.

mod tridiag;

use rayon::prelude::*;

use crate::coeffs::CoefficientSet;
use crate::error::{CoreError, Result};
use crate::field::{FieldRank, SpaceTimeField};
use crate::grid::UniformGrid;
use crate::norms::{mixed_norm, MixedNormParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    ImplicitEuler,
    CrankNicolson,
}

impl Scheme {
    fn theta(self) -> f64 {
        match self {
            Scheme::ImplicitEuler => 1.0,
            Scheme::CrankNicolson => 0.5,
        }
    }
}

/// Backward problem data: coefficients, source field, grid. The terminal time
/// is the grid's `t_end`, where the solution vanishes identically.
pub struct PdeProblem {
    pub coeffs: CoefficientSet,
    pub source: SpaceTimeField,
    pub grid: UniformGrid,
    /// Exponents used for the reported mixed norms.
    pub p: f64,
    pub q: f64,
}

impl PdeProblem {
    pub fn new(coeffs: CoefficientSet, source: SpaceTimeField, p: f64, q: f64) -> Result<Self> {
        if !source.all_finite() {
            return Err(CoreError::InvalidField(
                "source field contains non-finite values".into(),
            ));
        }
        if source.rank() == FieldRank::Matrix {
            return Err(CoreError::InvalidField(
                "source must be scalar or vector".into(),
            ));
        }
        let grid = source.grid().clone();
        if coeffs.dim != grid.dim {
            return Err(CoreError::InvalidParams(
                "coefficient dimension does not match grid".into(),
            ));
        }
        Ok(Self {
            coeffs,
            source,
            grid,
            p,
            q,
        })
    }
}

/// Mixed norms of the solution and its derivatives over a time window,
/// plus sup statistics. All values are measured, not asserted.
#[derive(Debug, Clone, serde::Serialize)]
pub struct NormReport {
    pub p: f64,
    pub q: f64,
    pub window: (f64, f64),
    pub u_norm: f64,
    pub grad_norm: f64,
    pub hess_norm: f64,
    pub dt_norm: f64,
    pub sup_u: f64,
    pub sup_grad_roi: f64,
}

pub struct PdeSolution {
    pub u: SpaceTimeField,
    pub grad_u: SpaceTimeField,
    /// One matrix field of second derivatives per solution component.
    pub hess_u: Vec<SpaceTimeField>,
    pub dt_u: SpaceTimeField,
    pub residual_norm: f64,
    pub norm_report: NormReport,
}

/// Pointwise diffusion matrix `a = sigma sigma^T` (row-major `d x d`).
fn diffusion_matrix(sig: &[f64], d: usize, out: &mut [f64]) {
    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            for k in 0..d {
                acc += sig[i * d + k] * sig[j * d + k];
            }
            out[i * d + j] = acc;
        }
    }
}

/// Per-slice coefficient tables: `a[p*dd..]` holds the diffusion matrix and
/// `b[p*d..]` the drift vector at spatial point `p`.
struct CoeffSlice {
    a: Vec<f64>,
    b: Vec<f64>,
}

fn coeff_slice(coeffs: &CoefficientSet, grid: &UniformGrid, t: f64) -> CoeffSlice {
    let d = grid.dim;
    let n = grid.n_points();
    let mut a = vec![0.0; n * d * d];
    let mut b = vec![0.0; n * d];
    let mut sig = vec![0.0; d * d];
    for p in 0..n {
        let x = grid.point(p);
        coeffs.sigma_at(t, &x[..d], &mut sig);
        diffusion_matrix(&sig, d, &mut a[p * d * d..(p + 1) * d * d]);
        coeffs.drift_at(t, &x[..d], &mut b[p * d..(p + 1) * d]);
    }
    CoeffSlice { a, b }
}

/// Apply the generator to one scalar spatial slice at time `t` using stencil
/// derivatives (central inside, one-sided first derivatives at the edges,
/// clamped second derivatives).
pub fn apply_generator(
    coeffs: &CoefficientSet,
    grid: &UniformGrid,
    u: &[f64],
    t: f64,
) -> Vec<f64> {
    let cs = coeff_slice(coeffs, grid, t);
    generator_on_slice(grid, &cs, u)
}

fn generator_on_slice(grid: &UniformGrid, cs: &CoeffSlice, u: &[f64]) -> Vec<f64> {
    let d = grid.dim;
    let n = grid.n_space;
    let h = grid.h();
    let h2 = h * h;
    let mut out = vec![0.0; grid.n_points()];
    match d {
        1 => {
            for i in 0..n {
                let du = if i == 0 {
                    (u[1] - u[0]) / h
                } else if i == n - 1 {
                    (u[n - 1] - u[n - 2]) / h
                } else {
                    (u[i + 1] - u[i - 1]) / (2.0 * h)
                };
                let ic = i.clamp(1, n - 2);
                let d2u = (u[ic + 1] - 2.0 * u[ic] + u[ic - 1]) / h2;
                out[i] = 0.5 * cs.a[i] * d2u + cs.b[i] * du;
            }
        }
        2 => {
            let flat = |i: usize, j: usize| i * n + j;
            for i in 0..n {
                for j in 0..n {
                    let p = flat(i, j);
                    let dux = if i == 0 {
                        (u[flat(1, j)] - u[p]) / h
                    } else if i == n - 1 {
                        (u[p] - u[flat(n - 2, j)]) / h
                    } else {
                        (u[flat(i + 1, j)] - u[flat(i - 1, j)]) / (2.0 * h)
                    };
                    let duy = if j == 0 {
                        (u[flat(i, 1)] - u[p]) / h
                    } else if j == n - 1 {
                        (u[p] - u[flat(i, n - 2)]) / h
                    } else {
                        (u[flat(i, j + 1)] - u[flat(i, j - 1)]) / (2.0 * h)
                    };
                    let ic = i.clamp(1, n - 2);
                    let jc = j.clamp(1, n - 2);
                    let dxx =
                        (u[flat(ic + 1, j)] - 2.0 * u[flat(ic, j)] + u[flat(ic - 1, j)]) / h2;
                    let dyy =
                        (u[flat(i, jc + 1)] - 2.0 * u[flat(i, jc)] + u[flat(i, jc - 1)]) / h2;
                    let dxy = (u[flat(ic + 1, jc + 1)] - u[flat(ic + 1, jc - 1)]
                        - u[flat(ic - 1, jc + 1)]
                        + u[flat(ic - 1, jc - 1)])
                        / (4.0 * h2);
                    let ap = &cs.a[p * 4..p * 4 + 4];
                    let bp = &cs.b[p * 2..p * 2 + 2];
                    // cross entries of sigma sigma^T are symmetric
                    out[p] = 0.5 * (ap[0] * dxx + ap[3] * dyy)
                        + ap[1] * dxy
                        + bp[0] * dux
                        + bp[1] * duy;
                }
            }
        }
        _ => unreachable!(),
    }
    out
}

/// One-dimensional backward step: solve `(I - theta dt L) u_new = rhs`.
fn step_1d(
    grid: &UniformGrid,
    cs: &CoeffSlice,
    theta: f64,
    dt: f64,
    rhs: &mut [f64],
    step: usize,
) -> Result<()> {
    let n = grid.n_space;
    let h = grid.h();
    let h2 = h * h;
    let mut lower = vec![0.0; n];
    let mut diag = vec![1.0; n];
    let mut upper = vec![0.0; n];
    for i in 1..n - 1 {
        let a = cs.a[i];
        let b = cs.b[i];
        diag[i] = 1.0 + theta * dt * a / h2;
        upper[i] = -theta * dt * (0.5 * a / h2 + 0.5 * b / h);
        lower[i] = -theta * dt * (0.5 * a / h2 - 0.5 * b / h);
    }
    rhs[0] = 0.0;
    rhs[n - 1] = 0.0;
    if let Some(v) = tridiag::check_dominance(&lower, &diag, &upper) {
        return Err(CoreError::LinearSolveFailure {
            step,
            t: grid.time(step),
            position: v.position,
            detail: format!(
                "diagonal dominance lost by {:.3e}; dt*|b|/h too large for the advection term",
                v.excess
            ),
        });
    }
    let mut scratch = vec![0.0; n];
    tridiag::solve(&lower, &diag, &upper, rhs, &mut scratch);
    Ok(())
}

enum Axis {
    X,
    Y,
}

/// Single-direction generator piece for the two-sweep 2-d schedule.
fn axis_generator(grid: &UniformGrid, cs: &CoeffSlice, u: &[f64], axis: Axis) -> Vec<f64> {
    let n = grid.n_space;
    let h = grid.h();
    let h2 = h * h;
    let flat = |i: usize, j: usize| i * n + j;
    let mut out = vec![0.0; grid.n_points()];
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            let p = flat(i, j);
            let ap = &cs.a[p * 4..p * 4 + 4];
            let bp = &cs.b[p * 2..p * 2 + 2];
            out[p] = match axis {
                Axis::X => {
                    let dxx = (u[flat(i + 1, j)] - 2.0 * u[p] + u[flat(i - 1, j)]) / h2;
                    let dux = (u[flat(i + 1, j)] - u[flat(i - 1, j)]) / (2.0 * h);
                    0.5 * ap[0] * dxx + bp[0] * dux
                }
                Axis::Y => {
                    let dyy = (u[flat(i, j + 1)] - 2.0 * u[p] + u[flat(i, j - 1)]) / h2;
                    let duy = (u[flat(i, j + 1)] - u[flat(i, j - 1)]) / (2.0 * h);
                    0.5 * ap[3] * dyy + bp[1] * duy
                }
            };
        }
    }
    out
}

fn cross_generator(grid: &UniformGrid, cs: &CoeffSlice, u: &[f64]) -> Vec<f64> {
    let n = grid.n_space;
    let h = grid.h();
    let flat = |i: usize, j: usize| i * n + j;
    let mut out = vec![0.0; grid.n_points()];
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            let p = flat(i, j);
            let a12 = cs.a[p * 4 + 1];
            let dxy = (u[flat(i + 1, j + 1)] - u[flat(i + 1, j - 1)] - u[flat(i - 1, j + 1)]
                + u[flat(i - 1, j - 1)])
                / (4.0 * h * h);
            out[p] = a12 * dxy;
        }
    }
    out
}

/// One alternating-direction sweep: solve `(I - tau L_axis) out = rhs` line
/// by line, Dirichlet walls. Lines are independent and solved in parallel.
fn adi_sweep(
    grid: &UniformGrid,
    cs: &CoeffSlice,
    tau: f64,
    rhs: &[f64],
    axis: Axis,
    step: usize,
) -> Result<Vec<f64>> {
    let n = grid.n_space;
    let h = grid.h();
    let h2 = h * h;
    let flat = |i: usize, j: usize| i * n + j;
    let mut out = vec![0.0; grid.n_points()];
    let lines: Vec<std::result::Result<(usize, Vec<f64>), CoreError>> = (1..n - 1)
        .into_par_iter()
        .map(|fixed| {
            let mut lower = vec![0.0; n];
            let mut diag = vec![1.0; n];
            let mut upper = vec![0.0; n];
            let mut line = vec![0.0; n];
            for m in 1..n - 1 {
                let p = match axis {
                    Axis::X => flat(m, fixed),
                    Axis::Y => flat(fixed, m),
                };
                let (a, b) = match axis {
                    Axis::X => (cs.a[p * 4], cs.b[p * 2]),
                    Axis::Y => (cs.a[p * 4 + 3], cs.b[p * 2 + 1]),
                };
                diag[m] = 1.0 + tau * a / h2;
                upper[m] = -tau * (0.5 * a / h2 + 0.5 * b / h);
                lower[m] = -tau * (0.5 * a / h2 - 0.5 * b / h);
                line[m] = rhs[p];
            }
            if let Some(v) = tridiag::check_dominance(&lower, &diag, &upper) {
                return Err(CoreError::LinearSolveFailure {
                    step,
                    t: grid.time(step),
                    position: v.position,
                    detail: format!(
                        "diagonal dominance lost by {:.3e} on an interior line",
                        v.excess
                    ),
                });
            }
            let mut scratch = vec![0.0; n];
            tridiag::solve(&lower, &diag, &upper, &mut line, &mut scratch);
            Ok((fixed, line))
        })
        .collect();
    for res in lines {
        let (fixed, line) = res?;
        for m in 1..n - 1 {
            let p = match axis {
                Axis::X => flat(m, fixed),
                Axis::Y => flat(fixed, m),
            };
            out[p] = line[m];
        }
    }
    Ok(out)
}

/// March the backward equation for one source component; returns per-slice
/// solution values.
fn march_component(
    problem: &PdeProblem,
    scheme: Scheme,
    component: usize,
) -> Result<Vec<Vec<f64>>> {
    let grid = &problem.grid;
    let nt = grid.n_time;
    let npts = grid.n_points();
    let dt = grid.dt();
    let theta = scheme.theta();
    let src = &problem.source;

    let mut u = vec![vec![0.0; npts]; nt + 1];
    for k in (0..nt).rev() {
        let t_new = grid.time(k);
        let t_old = grid.time(k + 1);
        let cs_new = coeff_slice(&problem.coeffs, grid, t_new);
        let src_val = |p: usize| match scheme {
            Scheme::ImplicitEuler => src.at(k + 1, p, component),
            Scheme::CrankNicolson => {
                0.5 * (src.at(k, p, component) + src.at(k + 1, p, component))
            }
        };
        match grid.dim {
            1 => {
                let expl = if theta < 1.0 {
                    let cs_old = coeff_slice(&problem.coeffs, grid, t_old);
                    generator_on_slice(grid, &cs_old, &u[k + 1])
                } else {
                    vec![0.0; npts]
                };
                let mut rhs = vec![0.0; npts];
                for p in 0..npts {
                    rhs[p] = u[k + 1][p] + (1.0 - theta) * dt * expl[p] + dt * src_val(p);
                }
                step_1d(grid, &cs_new, theta, dt, &mut rhs, k)?;
                u[k] = rhs;
            }
            2 => {
                // Fixed two-sweep schedule over dt/2 each, coefficients frozen
                // at the target level, source split over the halves.
                let tau = 0.5 * dt;
                let ly_old = axis_generator(grid, &cs_new, &u[k + 1], Axis::Y);
                let lc_old = cross_generator(grid, &cs_new, &u[k + 1]);
                let mut rhs1 = vec![0.0; npts];
                for p in 0..npts {
                    rhs1[p] = u[k + 1][p] + tau * (ly_old[p] + lc_old[p] + src_val(p));
                }
                let u_half = adi_sweep(grid, &cs_new, tau, &rhs1, Axis::X, k)?;
                let lx_half = axis_generator(grid, &cs_new, &u_half, Axis::X);
                let lc_half = cross_generator(grid, &cs_new, &u_half);
                let mut rhs2 = vec![0.0; npts];
                for p in 0..npts {
                    rhs2[p] = u_half[p] + tau * (lx_half[p] + lc_half[p] + src_val(p));
                }
                u[k] = adi_sweep(grid, &cs_new, tau, &rhs2, Axis::Y, k)?;
            }
            _ => unreachable!(),
        }
        if u[k].iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NanDetected { step: k, t: t_new });
        }
    }
    Ok(u)
}

/// Solve the backward problem. Vector sources solve per component. The
/// solution carries stencil derivatives and measured norm diagnostics; the
/// terminal slice is exactly zero.
pub fn solve_backward(problem: &PdeProblem, scheme: Scheme) -> Result<PdeSolution> {
    let grid = &problem.grid;
    let rank = problem.source.rank();
    let nc = problem.source.n_components();
    let mut u = SpaceTimeField::zeros(grid, rank);
    for c in 0..nc {
        let vals = march_component(problem, scheme, c)?;
        for (k, slice) in vals.iter().enumerate() {
            for (p, &v) in slice.iter().enumerate() {
                u.set(k, p, c, v);
            }
        }
    }

    let grad_u = u.gradient()?;
    let d = grid.dim;
    let mut hess_u = Vec::with_capacity(nc);
    for c in 0..nc {
        let mut hc = SpaceTimeField::zeros(grid, FieldRank::Matrix);
        for k in 0..grid.n_slices() {
            for p in 0..grid.n_points() {
                for ax in 0..d {
                    let v = u.second_derivative_at(k, p, c, ax);
                    hc.set(k, p, ax * d + ax, v);
                }
                if d == 2 {
                    let v = u.cross_derivative_at(k, p, c);
                    hc.set(k, p, 1, v);
                    hc.set(k, p, 2, v);
                }
            }
        }
        hess_u.push(hc);
    }

    let dt = grid.dt();
    let mut dt_u = SpaceTimeField::zeros(grid, rank);
    for k in 0..grid.n_slices() {
        for p in 0..grid.n_points() {
            for c in 0..nc {
                let v = if k == 0 {
                    (u.at(1, p, c) - u.at(0, p, c)) / dt
                } else if k == grid.n_time {
                    (u.at(k, p, c) - u.at(k - 1, p, c)) / dt
                } else {
                    (u.at(k + 1, p, c) - u.at(k - 1, p, c)) / (2.0 * dt)
                };
                dt_u.set(k, p, c, v);
            }
        }
    }

    let params = MixedNormParams::new(problem.p, problem.q, grid.t_start, grid.t_end)?;
    let hess_norm: f64 = hess_u
        .iter()
        .map(|hc| mixed_norm(hc, &params).unwrap_or(f64::NAN))
        .sum();
    let sup_u = u.data().iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let (ilo, ihi) = grid.roi_index_range();
    let mut sup_grad_roi = 0.0f64;
    for k in 0..grid.n_slices() {
        for p in 0..grid.n_points() {
            let idx = grid.unflat(p);
            let inside =
                (ilo..=ihi).contains(&idx[0]) && (d == 1 || (ilo..=ihi).contains(&idx[1]));
            if !inside {
                continue;
            }
            let mut g2 = 0.0;
            for c in 0..grad_u.n_components() {
                g2 += grad_u.at(k, p, c).powi(2);
            }
            sup_grad_roi = sup_grad_roi.max(g2.sqrt());
        }
    }
    let norm_report = NormReport {
        p: problem.p,
        q: problem.q,
        window: (grid.t_start, grid.t_end),
        u_norm: mixed_norm(&u, &params)?,
        grad_norm: mixed_norm(&grad_u, &params)?,
        hess_norm,
        dt_norm: mixed_norm(&dt_u, &params)?,
        sup_u,
        sup_grad_roi,
    };

    let mut solution = PdeSolution {
        u,
        grad_u,
        hess_u,
        dt_u,
        residual_norm: 0.0,
        norm_report,
    };
    solution.residual_norm = residual_report(problem, &solution, &params)?;
    Ok(solution)
}

/// A-posteriori residual: the mixed norm of `d_t u + L_t u + f` evaluated
/// with stencils independent of the marching algebra (centered time
/// difference inside, one-sided at the window ends), restricted to the
/// region of interest.
pub fn residual_report(
    problem: &PdeProblem,
    solution: &PdeSolution,
    params: &MixedNormParams,
) -> Result<f64> {
    let grid = &problem.grid;
    let u = &solution.u;
    let nc = u.n_components();
    let d = grid.dim;
    let dt = grid.dt();
    let (ilo, ihi) = grid.roi_index_range();
    let mut res = SpaceTimeField::zeros(grid, u.rank());
    for k in 0..grid.n_slices() {
        let t = grid.time(k);
        let cs = coeff_slice(&problem.coeffs, grid, t);
        for c in 0..nc {
            let slice: Vec<f64> = (0..grid.n_points()).map(|p| u.at(k, p, c)).collect();
            let lu = generator_on_slice(grid, &cs, &slice);
            for p in 0..grid.n_points() {
                let idx = grid.unflat(p);
                let inside =
                    (ilo..=ihi).contains(&idx[0]) && (d == 1 || (ilo..=ihi).contains(&idx[1]));
                if !inside {
                    continue;
                }
                let du_dt = if k == 0 {
                    (u.at(1, p, c) - u.at(0, p, c)) / dt
                } else if k == grid.n_time {
                    (u.at(k, p, c) - u.at(k - 1, p, c)) / dt
                } else {
                    (u.at(k + 1, p, c) - u.at(k - 1, p, c)) / (2.0 * dt)
                };
                res.set(k, p, c, du_dt + lu[p] + problem.source.at(k, p, c));
            }
        }
    }
    mixed_norm(&res, params)
}
