//! Drift-killing coordinate change per time segment: `Phi_t(x) = x + u(t,x)`
//! where `u` solves the backward equation sourced by the drift, its numerical
//! inverse `Psi`, the transformed diffusion `Sigma = (grad Phi . sigma) o Psi`,
//! and the chaining of accepted segments across the horizon.
//!
//! A segment is accepted when the measured `sup |grad u|` over the window and
//! region of interest is at most 1/2; that bound is what makes `Phi` a
//! bi-Lipschitz perturbation of the identity (ratio sandwich `[1/2, 3/2]`)
//! and the inverse iteration a contraction. Windows whose solve lands above
//! 1/2 are bisected until they pass or hit the floor of four time steps.

use serde::Serialize;

use crate::coeffs::CoefficientSet;
use crate::error::{CoreError, Result};
use crate::field::{FieldRank, SpaceTimeField};
use crate::grid::UniformGrid;
use crate::pde::{solve_backward, NormReport, PdeProblem, Scheme};

/// Acceptance threshold on the measured gradient sup.
pub const GRADIENT_ACCEPT: f64 = 0.5;
/// Inverse-iteration stopping tolerance.
pub const INVERSE_TOL: f64 = 1e-10;
/// Minimum window width in time steps.
pub const MIN_WINDOW_STEPS: usize = 4;

#[derive(Debug)]
pub struct ZvonkinSegment {
    /// Sub-grid over the segment window `[S, T]`.
    pub window_grid: UniformGrid,
    /// Vector solution of the drift-sourced backward equation, zero at `T`.
    pub u: SpaceTimeField,
    /// Jacobian of `u` (matrix field, central stencils).
    pub grad_u: SpaceTimeField,
    /// Conservative Lipschitz measure of `u` over window x region of
    /// interest: per-cell one-sided slopes, so it bounds the interpolant.
    pub sup_grad: f64,
    /// Transformed diffusion on the window grid.
    pub sigma_transformed: SpaceTimeField,
    /// Sampled singular-value range of the transformed diffusion.
    pub sigma_singular_range: (f64, f64),
    /// Reported regularity exponent (midpoint of the admissible interval).
    pub holder_exponent: f64,
    /// Measured solve norms over the window.
    pub norm_report: NormReport,
}

#[derive(Debug)]
pub enum SegmentOutcome {
    Accepted(Box<ZvonkinSegment>),
    /// Not an error: the window is too long for the drift at this grid.
    Refused { sup_grad: f64 },
}

/// One node of the bisection history (useful for shrinkage diagnostics).
#[derive(Debug, Clone, Serialize)]
pub struct BuildEvent {
    pub start: f64,
    pub end: f64,
    pub sup_grad: f64,
    pub accepted: bool,
    pub depth: usize,
}

#[derive(Debug)]
pub struct ZvonkinChain {
    /// Contiguous accepted segments covering the full horizon in order.
    pub segments: Vec<ZvonkinSegment>,
    pub build_log: Vec<BuildEvent>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SegmentManifest {
    pub start: f64,
    pub end: f64,
    pub n_steps: usize,
    pub sup_grad: f64,
    pub holder_exponent: f64,
    pub sigma_singular_range: (f64, f64),
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainManifest {
    pub t_start: f64,
    pub t_end: f64,
    pub n_segments: usize,
    pub segments: Vec<SegmentManifest>,
}

impl ZvonkinChain {
    /// Segment owning time `t` (half-open windows, the last one closed).
    pub fn segment_for(&self, t: f64) -> &ZvonkinSegment {
        for seg in &self.segments {
            if t < seg.window_grid.t_end {
                return seg;
            }
        }
        self.segments.last().expect("chain has segments")
    }

    pub fn manifest(&self) -> ChainManifest {
        ChainManifest {
            t_start: self.segments.first().map(|s| s.window_grid.t_start).unwrap_or(0.0),
            t_end: self.segments.last().map(|s| s.window_grid.t_end).unwrap_or(0.0),
            n_segments: self.segments.len(),
            segments: self
                .segments
                .iter()
                .map(|s| SegmentManifest {
                    start: s.window_grid.t_start,
                    end: s.window_grid.t_end,
                    n_steps: s.window_grid.n_time,
                    sup_grad: s.sup_grad,
                    holder_exponent: s.holder_exponent,
                    sigma_singular_range: s.sigma_singular_range,
                })
                .collect(),
        }
    }
}

/// Conservative sup of the interpolant's Jacobian over window x region of
/// interest: per cell, the worst one-sided slope per (component, axis) edge,
/// combined in Frobenius norm. Bounds the spectral norm anywhere in the cell.
fn measure_sup_grad(u: &SpaceTimeField) -> f64 {
    let g = u.grid();
    let d = g.dim;
    let h = g.h();
    let (ilo, ihi) = g.roi_index_range();
    let cell_hi = ihi.min(g.n_space - 2);
    let mut sup: f64 = 0.0;
    for k in 0..g.n_slices() {
        match d {
            1 => {
                for i in ilo..=cell_hi {
                    let slope = (u.at(k, i + 1, 0) - u.at(k, i, 0)).abs() / h;
                    sup = sup.max(slope);
                }
            }
            2 => {
                for i in ilo..=cell_hi {
                    for j in ilo..=cell_hi {
                        let mut fro2 = 0.0;
                        for c in 0..2 {
                            let f = |a: usize, b: usize| u.at(k, g.flat(&[a, b]), c);
                            let sx = ((f(i + 1, j) - f(i, j)).abs() / h)
                                .max((f(i + 1, j + 1) - f(i, j + 1)).abs() / h);
                            let sy = ((f(i, j + 1) - f(i, j)).abs() / h)
                                .max((f(i + 1, j + 1) - f(i + 1, j)).abs() / h);
                            fro2 += sx * sx + sy * sy;
                        }
                        sup = sup.max(fro2.sqrt());
                    }
                }
            }
            _ => unreachable!(),
        }
    }
    sup
}

/// Singular values of a small matrix (d <= 2), ascending.
fn singular_values(m: &[f64], d: usize) -> (f64, f64) {
    match d {
        1 => {
            let s = m[0].abs();
            (s, s)
        }
        2 => {
            let fro2 = m.iter().map(|v| v * v).sum::<f64>();
            let det = m[0] * m[3] - m[1] * m[2];
            let mid = 0.5 * fro2;
            let disc = (mid * mid - det * det).max(0.0).sqrt();
            let s_max = (mid + disc).sqrt();
            let s_min = (mid - disc).max(0.0).sqrt();
            (s_min, s_max)
        }
        _ => unreachable!(),
    }
}

/// Forward map `y = x + u(t, x)` by interpolation.
pub fn forward_map(seg: &ZvonkinSegment, t: f64, x: &[f64], out: &mut [f64]) {
    forward_map_at(seg, seg.window_grid.time_slice(t), x, out)
}

/// Forward map on an explicit window time slice (exact for steppers that
/// already track slice indices).
pub fn forward_map_at(seg: &ZvonkinSegment, k: usize, x: &[f64], out: &mut [f64]) {
    let d = seg.window_grid.dim;
    for c in 0..d {
        out[c] = x[c] + seg.u.eval_slice(k, x, c);
    }
}

fn jacobian_at(seg: &ZvonkinSegment, k: usize, x: &[f64], jac: &mut [f64]) {
    let d = seg.window_grid.dim;
    for c in 0..d * d {
        jac[c] = seg.grad_u.eval_slice(k, x, c);
    }
    for i in 0..d {
        jac[i * d + i] += 1.0;
    }
}

fn solve_small(jac: &[f64], rhs: &[f64], d: usize, out: &mut [f64]) -> bool {
    match d {
        1 => {
            if jac[0].abs() < 1e-14 {
                return false;
            }
            out[0] = rhs[0] / jac[0];
            true
        }
        2 => {
            let det = jac[0] * jac[3] - jac[1] * jac[2];
            if det.abs() < 1e-14 {
                return false;
            }
            out[0] = (rhs[0] * jac[3] - rhs[1] * jac[1]) / det;
            out[1] = (jac[0] * rhs[1] - jac[2] * rhs[0]) / det;
            true
        }
        _ => unreachable!(),
    }
}

/// Inverse map `x = Phi_t^{-1}(y)` by damped Newton iteration with the
/// interpolated Jacobian `I + grad u`, initial guess `y`. Falls back to
/// bisection in one dimension (the map is strictly increasing there) and to
/// plain fixed-point iteration in two.
pub fn inverse_map(seg: &ZvonkinSegment, t: f64, y: &[f64], out: &mut [f64]) -> Result<()> {
    inverse_map_at(seg, seg.window_grid.time_slice(t), y, out)
}

/// Inverse map on an explicit window time slice.
pub fn inverse_map_at(seg: &ZvonkinSegment, k: usize, y: &[f64], out: &mut [f64]) -> Result<()> {
    let g = &seg.window_grid;
    let d = g.dim;
    let t = g.time(k.min(g.n_time));
    let mut x = [0.0f64; 2];
    let mut fx = [0.0f64; 2];
    let mut res = [0.0f64; 2];
    let mut jac = [0.0f64; 4];
    let mut dx = [0.0f64; 2];
    x[..d].copy_from_slice(&y[..d]);

    let residual = |x: &[f64], res: &mut [f64]| -> f64 {
        let mut norm2 = 0.0;
        for c in 0..d {
            res[c] = x[c] + seg.u.eval_slice(k, x, c) - y[c];
            norm2 += res[c] * res[c];
        }
        norm2.sqrt()
    };

    let mut best = residual(&x[..d], &mut res[..d]);
    for _ in 0..50 {
        if best <= INVERSE_TOL {
            out[..d].copy_from_slice(&x[..d]);
            return Ok(());
        }
        jacobian_at(seg, k, &x[..d], &mut jac[..d * d]);
        if !solve_small(&jac[..d * d], &res[..d], d, &mut dx[..d]) {
            break;
        }
        let mut improved = false;
        let mut step = 1.0;
        for _ in 0..4 {
            for c in 0..d {
                fx[c] = x[c] - step * dx[c];
            }
            let cand = residual(&fx[..d], &mut res[..d]);
            if cand < best {
                x[..d].copy_from_slice(&fx[..d]);
                best = cand;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    if best <= INVERSE_TOL {
        out[..d].copy_from_slice(&x[..d]);
        return Ok(());
    }

    // Fallbacks.
    match d {
        1 => {
            // Phi is increasing; expand a bracket around y and bisect.
            let phi = |x: f64| x + seg.u.eval_slice(k, &[x], 0);
            let mut radius = (2.0 * best).max(1e-6);
            let (mut lo, mut hi) = (y[0] - radius, y[0] + radius);
            for _ in 0..60 {
                if phi(lo) <= y[0] && phi(hi) >= y[0] {
                    break;
                }
                radius *= 2.0;
                lo = y[0] - radius;
                hi = y[0] + radius;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if phi(mid) < y[0] {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let cand = 0.5 * (lo + hi);
            if (phi(cand) - y[0]).abs() <= INVERSE_TOL * 10.0 {
                out[0] = cand;
                return Ok(());
            }
        }
        2 => {
            x[..d].copy_from_slice(&y[..d]);
            for _ in 0..200 {
                let r = residual(&x[..d], &mut res[..d]);
                if r <= INVERSE_TOL {
                    out[..d].copy_from_slice(&x[..d]);
                    return Ok(());
                }
                for c in 0..d {
                    fx[c] = y[c] - seg.u.eval_slice(k, &x[..d], c);
                }
                x[..d].copy_from_slice(&fx[..d]);
            }
        }
        _ => unreachable!(),
    }
    Err(CoreError::InversionFailure {
        segment: 0,
        t,
        target: y[..d].to_vec(),
    })
}

/// Assemble the transformed diffusion on the segment's window grid:
/// `Sigma(t, y) = (I + grad u)(t, x) . sigma(t, x)` at `x = Psi_t(y)`.
/// Also returns the sampled singular-value range.
pub fn transformed_sigma(
    seg: &ZvonkinSegment,
    coeffs: &CoefficientSet,
) -> Result<(SpaceTimeField, (f64, f64))> {
    let g = seg.window_grid.clone();
    let d = g.dim;
    let mut field = SpaceTimeField::zeros(&g, FieldRank::Matrix);
    let mut s_min = f64::INFINITY;
    let mut s_max = 0.0f64;
    let mut x = [0.0f64; 2];
    let mut jac = [0.0f64; 4];
    let mut sig = [0.0f64; 4];
    let mut prod = [0.0f64; 4];
    for k in 0..g.n_slices() {
        let t = g.time(k);
        for p in 0..g.n_points() {
            let y = g.point(p);
            inverse_map(seg, t, &y[..d], &mut x[..d])?;
            jacobian_at(seg, k, &x[..d], &mut jac[..d * d]);
            coeffs.sigma_at(t, &x[..d], &mut sig[..d * d]);
            for i in 0..d {
                for j in 0..d {
                    let mut acc = 0.0;
                    for l in 0..d {
                        acc += jac[i * d + l] * sig[l * d + j];
                    }
                    prod[i * d + j] = acc;
                }
            }
            for c in 0..d * d {
                field.set(k, p, c, prod[c]);
            }
            if g.in_roi(&y[..d]) {
                let (lo, hi) = singular_values(&prod[..d * d], d);
                s_min = s_min.min(lo);
                s_max = s_max.max(hi);
            }
        }
    }
    if !s_min.is_finite() {
        s_min = 0.0;
    }
    Ok((field, (s_min, s_max)))
}

/// Solve the drift-sourced backward equation on the window and accept the
/// segment when the measured gradient sup is at most 1/2. A refusal is a
/// value, not an error.
pub fn build_segment(
    coeffs: &CoefficientSet,
    window: &UniformGrid,
    p: f64,
    q: f64,
    scheme: Scheme,
) -> Result<SegmentOutcome> {
    let d = window.dim;
    let mut source = SpaceTimeField::zeros(window, FieldRank::Vector);
    let mut b = vec![0.0; d];
    for k in 0..window.n_slices() {
        let t = window.time(k);
        for pt in 0..window.n_points() {
            let x = window.point(pt);
            coeffs.drift_at(t, &x[..d], &mut b);
            for c in 0..d {
                source.set(k, pt, c, b[c]);
            }
        }
    }
    let problem = PdeProblem::new(coeffs.clone(), source, p, q)?;
    let solution = solve_backward(&problem, scheme)?;
    let sup_grad = measure_sup_grad(&solution.u);
    if sup_grad > GRADIENT_ACCEPT {
        return Ok(SegmentOutcome::Refused { sup_grad });
    }
    let admissible = 0.5 - d as f64 / (2.0 * p) - 1.0 / q;
    let mut seg = ZvonkinSegment {
        window_grid: window.clone(),
        u: solution.u,
        grad_u: solution.grad_u,
        sup_grad,
        sigma_transformed: SpaceTimeField::zeros(window, FieldRank::Matrix),
        sigma_singular_range: (0.0, 0.0),
        holder_exponent: (admissible / 2.0).max(0.0),
        norm_report: solution.norm_report,
    };
    let (field, range) = transformed_sigma(&seg, coeffs)?;
    seg.sigma_transformed = field;
    seg.sigma_singular_range = range;
    Ok(SegmentOutcome::Accepted(Box::new(seg)))
}

fn partition_rec(
    coeffs: &CoefficientSet,
    grid: &UniformGrid,
    k_lo: usize,
    k_hi: usize,
    p: f64,
    q: f64,
    scheme: Scheme,
    depth: usize,
) -> Result<(Vec<ZvonkinSegment>, Vec<BuildEvent>)> {
    let window = grid.time_window(k_lo, k_hi)?;
    let outcome = build_segment(coeffs, &window, p, q, scheme)?;
    match outcome {
        SegmentOutcome::Accepted(seg) => {
            let ev = BuildEvent {
                start: window.t_start,
                end: window.t_end,
                sup_grad: seg.sup_grad,
                accepted: true,
                depth,
            };
            Ok((vec![*seg], vec![ev]))
        }
        SegmentOutcome::Refused { sup_grad } => {
            let ev = BuildEvent {
                start: window.t_start,
                end: window.t_end,
                sup_grad,
                accepted: false,
                depth,
            };
            if k_hi - k_lo < 2 * MIN_WINDOW_STEPS {
                return Err(CoreError::MinimumWindowReached {
                    start: window.t_start,
                    end: window.t_end,
                    sup_grad,
                    min_width: MIN_WINDOW_STEPS as f64 * grid.dt(),
                });
            }
            let mid = (k_lo + k_hi) / 2;
            let (left, right) = rayon::join(
                || partition_rec(coeffs, grid, k_lo, mid, p, q, scheme, depth + 1),
                || partition_rec(coeffs, grid, mid, k_hi, p, q, scheme, depth + 1),
            );
            let (mut segs, mut log) = left?;
            let (rsegs, rlog) = right?;
            segs.extend(rsegs);
            log.push(ev);
            log.extend(rlog);
            Ok((segs, log))
        }
    }
}

/// Cover the grid's full time range with accepted segments by recursive
/// bisection of refused windows. Fails with the window floor error when a
/// four-step window still refuses.
pub fn partition(
    coeffs: &CoefficientSet,
    grid: &UniformGrid,
    p: f64,
    q: f64,
    scheme: Scheme,
) -> Result<ZvonkinChain> {
    let (segments, build_log) =
        partition_rec(coeffs, grid, 0, grid.n_time, p, q, scheme, 0)?;
    debug_assert!(segments
        .windows(2)
        .all(|w| (w[0].window_grid.t_end - w[1].window_grid.t_start).abs() < 1e-12));
    Ok(ZvonkinChain {
        segments,
        build_log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    use crate::coeffs::{DriftSpec, MatrixFn, PrepOptions, SigmaSpec, VectorFn};

    fn grid(n_time: usize, half_width: f64, n_space: usize) -> UniformGrid {
        UniformGrid::new(1, 0.0, 1.0, n_time, half_width, n_space).unwrap()
    }

    #[test]
    fn zero_drift_gives_identity_map() {
        let g = grid(50, 4.0, 101);
        let coeffs = CoefficientSet::constant(1, 0.0, 1.0, &g).unwrap();
        let chain = partition(&coeffs, &g, 4.0, 8.0, Scheme::ImplicitEuler).unwrap();
        assert_eq!(chain.segments.len(), 1);
        let seg = &chain.segments[0];
        assert_eq!(seg.sup_grad, 0.0);
        let mut y = [0.0];
        forward_map(seg, 0.3, &[0.7], &mut y);
        assert_eq!(y[0], 0.7);
        let mut x = [0.0];
        inverse_map(seg, 0.3, &[0.7], &mut x).unwrap();
        assert_eq!(x[0], 0.7);
        // identity transform leaves sigma in place
        assert!((seg.sigma_transformed.at(0, 50, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_drift_closed_form() {
        // u(t,x) = c (T - t) away from the walls; the box is sized so the
        // wall layer stays outside the region of interest.
        let c = 0.5;
        let g = UniformGrid::new(1, 0.0, 0.25, 250, 12.0, 601).unwrap();
        let coeffs = CoefficientSet::constant(1, c, 1.0, &g).unwrap();
        let out = build_segment(&coeffs, &g, 4.0, 8.0, Scheme::ImplicitEuler).unwrap();
        let seg = match out {
            SegmentOutcome::Accepted(s) => s,
            SegmentOutcome::Refused { sup_grad } => panic!("refused at {sup_grad}"),
        };
        assert!(seg.sup_grad < 1e-6, "sup_grad {}", seg.sup_grad);
        let (ilo, ihi) = g.roi_index_range();
        let mut err: f64 = 0.0;
        for k in 0..g.n_slices() {
            let want = c * (g.t_end - g.time(k));
            for i in ilo..=ihi {
                err = err.max((seg.u.at(k, i, 0) - want).abs());
            }
        }
        assert!(err < 1e-6, "max u error {err}");

        // inverse is the exact shift, round trip to 1e-10
        let mut x = [0.0];
        let mut y = [0.0];
        for &target in &[-1.0, -0.3, 0.0, 0.9, 2.0] {
            inverse_map(&seg, 0.1, &[target], &mut x).unwrap();
            forward_map(&seg, 0.1, &x, &mut y);
            assert!((y[0] - target).abs() <= 1e-10);
            let shift = c * (g.t_end - 0.1);
            assert!((x[0] - (target - shift)).abs() < 1e-5);
        }
    }

    #[test]
    fn transformed_sigma_composes_with_inverse() {
        // grad Phi = I for spatially flat u, so Sigma(t, y) = sigma(Psi(y)).
        let c = 0.4;
        let g = UniformGrid::new(1, 0.0, 0.25, 125, 12.0, 1201).unwrap();
        let drift: VectorFn = Arc::new(move |_t, _x, out| out[0] = c);
        let sig: MatrixFn = Arc::new(|_t, x, out| out[0] = 1.0 + 0.1 * (0.5 * x[0]).sin());
        let coeffs = CoefficientSet::new(
            1,
            DriftSpec::Analytic(drift),
            SigmaSpec::Analytic(sig),
            0.8,
            1.3,
            &g,
        )
        .unwrap();
        let out = build_segment(&coeffs, &g, 4.0, 8.0, Scheme::ImplicitEuler).unwrap();
        let seg = match out {
            SegmentOutcome::Accepted(s) => s,
            _ => panic!("refused"),
        };
        let (ilo, ihi) = g.roi_index_range();
        for k in (0..g.n_slices()).step_by(31) {
            let shift = c * (g.t_end - g.time(k));
            for i in (ilo..=ihi).step_by(97) {
                let y = g.coord(i);
                let want = 1.0 + 0.1 * (0.5 * (y - shift)).sin();
                let got = seg.sigma_transformed.at(k, i, 0);
                assert!((got - want).abs() < 1e-3, "k={k} i={i}: {got} vs {want}");
            }
        }
        let (lo, hi) = seg.sigma_singular_range;
        assert!(lo >= 0.5 * 0.8f64.sqrt() - 1e-9);
        assert!(hi <= 1.5 * 1.3f64.sqrt() + 1e-9);
    }

    fn singular_coeffs(g: &UniformGrid, beta: f64) -> CoefficientSet {
        let drift: VectorFn = Arc::new(move |_t, x, out| {
            out[0] = if x[0].abs() <= 1.0 && x[0] != 0.0 {
                beta * x[0].abs().powf(-0.25)
            } else if x[0] == 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
        });
        let sig: MatrixFn = Arc::new(|_t, _x, out| out[0] = 1.0);
        let raw = CoefficientSet::new(
            1,
            DriftSpec::Analytic(drift),
            SigmaSpec::Analytic(sig),
            1.0,
            1.0,
            g,
        )
        .unwrap();
        raw.prepared(g, PrepOptions::tied_to_grid(g, 1.0)).unwrap()
    }

    #[test]
    fn strong_singular_drift_is_refused_then_partitioned() {
        let g = grid(200, 4.0, 401);
        let coeffs = singular_coeffs(&g, 1.0);
        match build_segment(&coeffs, &g, 4.0, 8.0, Scheme::ImplicitEuler).unwrap() {
            SegmentOutcome::Refused { sup_grad } => assert!(sup_grad > GRADIENT_ACCEPT),
            SegmentOutcome::Accepted(s) => {
                panic!("expected refusal, accepted with sup_grad {}", s.sup_grad)
            }
        }
        let chain = partition(&coeffs, &g, 4.0, 8.0, Scheme::ImplicitEuler).unwrap();
        assert!(chain.segments.len() >= 2, "got {}", chain.segments.len());
        // contiguous cover of [0, 1]
        assert_eq!(chain.segments[0].window_grid.t_start, 0.0);
        assert_eq!(chain.segments.last().unwrap().window_grid.t_end, 1.0);
        for w in chain.segments.windows(2) {
            assert!((w[0].window_grid.t_end - w[1].window_grid.t_start).abs() < 1e-12);
        }
        for seg in &chain.segments {
            assert!(seg.sup_grad <= GRADIENT_ACCEPT);
        }
    }

    #[test]
    fn stronger_drift_needs_more_segments() {
        let g = grid(128, 6.0, 301);
        let mk = |amp: f64| {
            let drift: VectorFn = Arc::new(move |_t, x, out| out[0] = amp * x[0].cos());
            let sig: MatrixFn = Arc::new(|_t, _x, out| out[0] = 1.0);
            CoefficientSet::new(
                1,
                DriftSpec::Analytic(drift),
                SigmaSpec::Analytic(sig),
                1.0,
                1.0,
                &g,
            )
            .unwrap()
        };
        let small = partition(&mk(0.3), &g, 4.0, 8.0, Scheme::ImplicitEuler).unwrap();
        let large = partition(&mk(3.0), &g, 4.0, 8.0, Scheme::ImplicitEuler).unwrap();
        assert_eq!(small.segments.len(), 1, "small drift should fit one window");
        assert!(
            large.segments.len() > small.segments.len(),
            "scaled drift: {} vs {}",
            large.segments.len(),
            small.segments.len()
        );
    }

    #[test]
    fn window_floor_produces_structured_error() {
        // A drift strong enough that even four-step windows refuse.
        let g = grid(32, 4.0, 201);
        let drift: VectorFn = Arc::new(|_t, x, out| out[0] = 60.0 * x[0].cos());
        let sig: MatrixFn = Arc::new(|_t, _x, out| out[0] = 1.0);
        let coeffs = CoefficientSet::new(
            1,
            DriftSpec::Analytic(drift),
            SigmaSpec::Analytic(sig),
            1.0,
            1.0,
            &g,
        )
        .unwrap();
        match partition(&coeffs, &g, 4.0, 8.0, Scheme::ImplicitEuler) {
            Err(CoreError::MinimumWindowReached { sup_grad, .. }) => {
                assert!(sup_grad > GRADIENT_ACCEPT);
            }
            Err(CoreError::LinearSolveFailure { .. }) => {
                // acceptable alternative: the advection dominance guard fires
            }
            other => panic!("expected structured failure, got ok={}", other.is_ok()),
        }
    }

    #[test]
    fn monotone_window_shrinkage_in_build_log() {
        let g = grid(200, 4.0, 401);
        let coeffs = singular_coeffs(&g, 1.0);
        let chain = partition(&coeffs, &g, 4.0, 8.0, Scheme::ImplicitEuler).unwrap();
        // children never measure a larger sup than their parent
        for parent in chain.build_log.iter().filter(|e| !e.accepted) {
            for child in chain.build_log.iter().filter(|e| {
                e.depth == parent.depth + 1
                    && e.start >= parent.start - 1e-12
                    && e.end <= parent.end + 1e-12
            }) {
                assert!(
                    child.sup_grad <= parent.sup_grad + 1e-12,
                    "child {} > parent {}",
                    child.sup_grad,
                    parent.sup_grad
                );
            }
        }
    }

    #[test]
    fn round_trip_battery_on_random_targets() {
        let g = grid(100, 4.0, 401);
        let coeffs = singular_coeffs(&g, 0.5);
        let chain = partition(&coeffs, &g, 4.0, 8.0, Scheme::ImplicitEuler).unwrap();
        let seg = chain.segment_for(0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut x = [0.0];
        let mut y = [0.0];
        for _ in 0..300 {
            let target = rng.gen_range(-3.0..3.0);
            let t = rng.gen_range(seg.window_grid.t_start..seg.window_grid.t_end);
            inverse_map(seg, t, &[target], &mut x).unwrap();
            forward_map(seg, t, &x, &mut y);
            assert!((y[0] - target).abs() <= 1e-9, "round trip {}", y[0] - target);
        }
    }

    #[test]
    fn forward_map_strictly_increasing_1d() {
        let g = grid(100, 4.0, 401);
        let coeffs = singular_coeffs(&g, 0.5);
        let chain = partition(&coeffs, &g, 4.0, 8.0, Scheme::ImplicitEuler).unwrap();
        let (ilo, ihi) = g.roi_index_range();
        for seg in &chain.segments {
            for k in 0..seg.window_grid.n_slices() {
                let mut prev = f64::NEG_INFINITY;
                for i in ilo..=ihi {
                    let v = g.coord(i) + seg.u.at(k, i, 0);
                    assert!(v > prev, "not increasing at k={k} i={i}");
                    prev = v;
                }
            }
        }
    }

    #[test]
    fn bilipschitz_sandwich_on_sampled_pairs() {
        let g = grid(200, 4.0, 401);
        let coeffs = singular_coeffs(&g, 1.0);
        let chain = partition(&coeffs, &g, 4.0, 8.0, Scheme::ImplicitEuler).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut ya = [0.0];
        let mut yb = [0.0];
        for seg in &chain.segments {
            let wg = &seg.window_grid;
            for _ in 0..200 {
                let a: f64 = rng.gen_range(-3.2..3.2);
                let b: f64 = rng.gen_range(-3.2..3.2);
                if (a - b).abs() < 1e-9 {
                    continue;
                }
                let t = rng.gen_range(wg.t_start..wg.t_end);
                forward_map(seg, t, &[a], &mut ya);
                forward_map(seg, t, &[b], &mut yb);
                let ratio = (ya[0] - yb[0]).abs() / (a - b).abs();
                assert!(
                    (0.5..=1.5).contains(&ratio),
                    "ratio {ratio} outside sandwich on [{}, {}]",
                    wg.t_start,
                    wg.t_end
                );
            }
        }
    }
}
