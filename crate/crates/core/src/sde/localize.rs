//! Localization: cutoff coefficient pairs that agree with the originals on a
//! space-time cylinder and flatten to safe constants outside, plus the glued
//! multi-level experiment that estimates blow-up times from nested exits.

use rayon::prelude::*;
use std::sync::Arc;

use super::brownian::BrownianSource;
use super::{IncrementStore, PathEnsemble, PathStatus};
use crate::coeffs::{CoefficientSet, DriftSpec, MatrixFn, SigmaSpec, VectorFn};
use crate::error::{CoreError, Result};
use crate::grid::UniformGrid;
use ndarray::Array3;

/// C^2 ramp: 1 for `theta <= 0`, 0 for `theta >= 1`, quintic blend between.
/// Exactly 1.0 and exactly 0.0 outside the blend band, so coefficients agree
/// bitwise with the originals inside the cylinder.
fn ramp(theta: f64) -> f64 {
    if theta <= 0.0 {
        1.0
    } else if theta >= 1.0 {
        0.0
    } else {
        let t3 = theta * theta * theta;
        1.0 - (10.0 * t3 - 15.0 * t3 * theta + 6.0 * t3 * theta * theta)
    }
}

/// Transition bump: 1 on `[0, level] x B_level`, 0 outside
/// `[0, level+1] x B_{level+1}`.
fn cylinder_bump(level: f64, t: f64, x: &[f64]) -> f64 {
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    ramp(t - level) * ramp(r - level)
}

/// Build the cutoff pair at the given level: the drift is the original inside
/// the cylinder and zero outside the next one; the diffusion blends to
/// `(1 + sup |sigma|) I` as the original is switched off, which keeps it
/// uniformly nondegenerate.
pub fn cutoff_coefficients(coeffs: &CoefficientSet, level: f64) -> Result<CoefficientSet> {
    if !(level > 0.0) {
        return Err(CoreError::InvalidParams("cutoff level must be positive".into()));
    }
    let d = coeffs.dim;
    // Sup of |sigma| over the enclosing cylinder, estimated on a lattice.
    let probe = UniformGrid::with_center(d, 0.0, level + 2.0, 8, level + 2.0, 0.0, 17)?;
    let sup_sigma = coeffs.sup_sigma_norm(&probe);
    let pad = 1.0 + sup_sigma;

    let inner = coeffs.clone();
    let drift: VectorFn = Arc::new(move |t, x, out| {
        let chi = cylinder_bump(level, t, x);
        if chi == 0.0 {
            out.fill(0.0);
        } else {
            inner.drift_at(t, x, out);
            for v in out.iter_mut() {
                *v *= chi;
            }
        }
    });
    let inner = coeffs.clone();
    let sigma: MatrixFn = Arc::new(move |t, x, out| {
        let chi_outer = cylinder_bump(level + 1.0, t, x);
        let chi_inner = cylinder_bump(level, t, x);
        if chi_outer == 0.0 {
            out.fill(0.0);
        } else {
            inner.sigma_at(t, x, out);
            if chi_outer < 1.0 {
                for v in out.iter_mut() {
                    *v *= chi_outer;
                }
            }
        }
        let blend = (1.0 - chi_inner) * pad;
        if blend != 0.0 {
            for i in 0..d {
                out[i * d + i] += blend;
            }
        }
    });

    let lower = coeffs.ellipticity_lower.min(1.0) * (1.0 - 1e-9);
    let upper = (coeffs.ellipticity_upper.sqrt() + pad).powi(2) * (1.0 + 1e-9);
    CoefficientSet::new(
        d,
        DriftSpec::Analytic(drift),
        SigmaSpec::Analytic(sigma),
        lower,
        upper,
        &probe,
    )
}

/// Result of the multi-level glued run. Exit time of level `i` on path `j` is
/// the first grid time the path reaches the level's ball radius, capped at
/// the level's time horizon; `INFINITY` when never reached.
#[derive(Debug)]
pub struct ExplosionExperiment {
    pub levels: Vec<f64>,
    pub exit_radii: Vec<f64>,
    /// `exit_times[i][j]`: level i, path j.
    pub exit_times: Vec<Vec<f64>>,
    /// Sup over paths of the pre-exit discrepancy between consecutive levels.
    pub agreement_sup: f64,
    /// Per-path decision: the two largest levels exited within one time step
    /// of each other, before the horizon.
    pub exploded: Vec<bool>,
    /// Per-path blow-up estimate: the largest level's exit time.
    pub zeta: Vec<f64>,
    /// Largest-level trajectories, decimated for export.
    pub ensemble: PathEnsemble,
}

/// Simulate the same noise through every cutoff level at once, tracking exit
/// times and checking that trajectories coincide until the inner exit.
pub fn glue_and_detect_explosion(
    coeffs: &CoefficientSet,
    levels: &[f64],
    x0: &[f64],
    horizon: f64,
    n_steps: usize,
    m: usize,
    seed: u64,
) -> Result<ExplosionExperiment> {
    if levels.len() < 2 {
        return Err(CoreError::InvalidParams(
            "need at least two cutoff levels".into(),
        ));
    }
    if levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CoreError::InvalidParams(
            "cutoff levels must be strictly increasing".into(),
        ));
    }
    let d = coeffs.dim;
    let dt = horizon / n_steps as f64;
    let source = BrownianSource::new(seed, n_steps, d, dt);
    let cut: Vec<CoefficientSet> = levels
        .iter()
        .map(|&n| cutoff_coefficients(coeffs, n))
        .collect::<Result<Vec<_>>>()?;
    let n_levels = levels.len();

    // Decimated recording for the export ensemble.
    let n_rec = 129.min(n_steps + 1);
    let rec_steps: Vec<usize> = (0..n_rec)
        .map(|r| r * n_steps / (n_rec - 1))
        .collect();

    struct PathOut {
        exits: Vec<f64>,
        agree: f64,
        recs: Vec<f64>,
        status: PathStatus,
    }

    let per_path: Vec<PathOut> = (0..m)
        .into_par_iter()
        .map(|j| {
            let mut dw = vec![0.0; n_steps * d];
            source.fill_path(j, &mut dw);
            let mut xs = vec![0.0f64; n_levels * d];
            for i in 0..n_levels {
                xs[i * d..(i + 1) * d].copy_from_slice(&x0[..d]);
            }
            let mut live = vec![true; n_levels];
            let mut exits = vec![f64::INFINITY; n_levels];
            let mut agree: f64 = 0.0;
            let mut b = [0.0f64; 2];
            let mut sg = [0.0f64; 4];
            let mut next = [0.0f64; 2];
            let mut recs = vec![0.0; rec_steps.len() * d];
            let mut rec_pos = 0;
            let mut status = PathStatus::Ok;
            if rec_steps[0] == 0 {
                recs[..d].copy_from_slice(&x0[..d]);
                rec_pos = 1;
            }
            for k in 0..n_steps {
                let t = k as f64 * dt;
                for i in 0..n_levels {
                    if !live[i] {
                        continue;
                    }
                    let x = &xs[i * d..(i + 1) * d];
                    cut[i].drift_at(t, x, &mut b[..d]);
                    cut[i].sigma_at(t, x, &mut sg[..d * d]);
                    for a in 0..d {
                        let mut acc = x[a] + b[a] * dt;
                        for c in 0..d {
                            acc += sg[a * d + c] * dw[k * d + c];
                        }
                        next[a] = acc;
                    }
                    if next[..d].iter().any(|v| !v.is_finite()) {
                        live[i] = false;
                        if i == n_levels - 1 {
                            status = PathStatus::NonFinite { step: k };
                        }
                        continue;
                    }
                    xs[i * d..(i + 1) * d].copy_from_slice(&next[..d]);
                    let r = next[..d].iter().map(|v| v * v).sum::<f64>().sqrt();
                    let t_next = (k + 1) as f64 * dt;
                    if exits[i].is_infinite() && (r >= levels[i] || t_next >= levels[i]) {
                        exits[i] = t_next;
                        live[i] = false;
                    }
                }
                // Pre-exit coincidence between consecutive levels.
                for i in 0..n_levels - 1 {
                    if exits[i].is_infinite() && live[i] && live[i + 1] {
                        let mut diff: f64 = 0.0;
                        for c in 0..d {
                            diff = diff.max((xs[i * d + c] - xs[(i + 1) * d + c]).abs());
                        }
                        agree = agree.max(diff);
                    }
                }
                if rec_pos < rec_steps.len() && rec_steps[rec_pos] == k + 1 {
                    let top = &xs[(n_levels - 1) * d..n_levels * d];
                    recs[rec_pos * d..(rec_pos + 1) * d].copy_from_slice(top);
                    rec_pos += 1;
                }
            }
            PathOut {
                exits,
                agree,
                recs,
                status,
            }
        })
        .collect();

    let mut exit_times = vec![vec![0.0; m]; n_levels];
    let mut agreement_sup: f64 = 0.0;
    let mut exploded = Vec::with_capacity(m);
    let mut zeta = Vec::with_capacity(m);
    let mut states = Array3::zeros((m, rec_steps.len(), d));
    let mut status = Vec::with_capacity(m);
    for (j, out) in per_path.iter().enumerate() {
        for i in 0..n_levels {
            exit_times[i][j] = out.exits[i];
        }
        agreement_sup = agreement_sup.max(out.agree);
        let last = out.exits[n_levels - 1];
        let prev = out.exits[n_levels - 2];
        let flagged = last.is_finite()
            && prev.is_finite()
            && (last - prev).abs() <= 1.5 * dt
            && last < horizon;
        exploded.push(flagged);
        zeta.push(last);
        for r in 0..rec_steps.len() {
            for c in 0..d {
                states[[j, r, c]] = out.recs[r * d + c];
            }
        }
        status.push(out.status);
    }
    let times = rec_steps.iter().map(|&k| k as f64 * dt).collect();
    let ensemble = PathEnsemble {
        dim: d,
        t0: 0.0,
        dt,
        record_steps: rec_steps,
        times,
        states,
        increments: IncrementStore::Replay(source),
        status,
        rng_seed: seed,
        scheme_tag: "glued-cutoff".to_string(),
    };
    Ok(ExplosionExperiment {
        levels: levels.to_vec(),
        exit_radii: levels.to_vec(),
        exit_times,
        agreement_sup,
        exploded,
        zeta,
        ensemble,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{DriftSpec, MatrixFn, SigmaSpec, VectorFn};

    fn check_grid() -> UniformGrid {
        UniformGrid::new(1, 0.0, 1.0, 4, 8.0, 17).unwrap()
    }

    fn bounded_coeffs() -> CoefficientSet {
        let drift: VectorFn = Arc::new(|_t, x, out| out[0] = -0.5 * x[0]);
        let sig: MatrixFn = Arc::new(|_t, _x, out| out[0] = 1.0);
        CoefficientSet::new(
            1,
            DriftSpec::Analytic(drift),
            SigmaSpec::Analytic(sig),
            1.0,
            1.0,
            &check_grid(),
        )
        .unwrap()
    }

    fn quadratic_blowup(eps: f64) -> CoefficientSet {
        let drift: VectorFn = Arc::new(|_t, x, out| out[0] = x[0] * x[0]);
        let sig: MatrixFn = Arc::new(move |_t, _x, out| out[0] = eps);
        CoefficientSet::new(
            1,
            DriftSpec::Analytic(drift),
            SigmaSpec::Analytic(sig),
            eps * eps * 0.999,
            eps * eps * 1.001,
            &check_grid(),
        )
        .unwrap()
    }

    #[test]
    fn cutoff_matches_inside_and_flattens_outside() {
        let coeffs = bounded_coeffs();
        let cut = cutoff_coefficients(&coeffs, 3.0).unwrap();
        let mut b = [0.0];
        let mut b0 = [0.0];
        let mut s = [0.0];
        // inside the cylinder: bitwise equality
        for &x in &[0.0, 1.5, -2.9] {
            cut.drift_at(1.0, &[x], &mut b);
            coeffs.drift_at(1.0, &[x], &mut b0);
            assert_eq!(b[0], b0[0]);
            cut.sigma_at(1.0, &[x], &mut s);
            assert_eq!(s[0], 1.0);
        }
        // off the drift cylinder: zero drift
        cut.drift_at(1.0, &[4.5], &mut b);
        assert_eq!(b[0], 0.0);
        // past the diffusion blend band: exactly the padded constant
        cut.sigma_at(1.0, &[5.5], &mut s);
        assert_eq!(s[0], 2.0); // 1 + sup|sigma| = 2
        // inside the blend band the pad keeps the diffusion above the floor
        cut.sigma_at(1.0, &[4.5], &mut s);
        assert!(s[0] >= 1.0);
        // time direction switches off too
        cut.drift_at(4.5, &[0.0], &mut b);
        assert_eq!(b[0], 0.0);
    }

    #[test]
    fn cutoff_keeps_ellipticity_on_sweep() {
        let coeffs = bounded_coeffs();
        let cut = cutoff_coefficients(&coeffs, 3.0).unwrap();
        // includes the blend band
        let sweep = UniformGrid::with_center(1, 0.0, 6.0, 16, 6.0, 0.0, 121).unwrap();
        let mut s = [0.0];
        for k in 0..sweep.n_slices() {
            for i in 0..sweep.n_space {
                cut.sigma_at(sweep.time(k), &[sweep.coord(i)], &mut s);
                assert!(
                    s[0] * s[0] >= coeffs.ellipticity_lower.min(1.0) - 1e-9,
                    "t={} x={}: {}",
                    sweep.time(k),
                    sweep.coord(i),
                    s[0]
                );
            }
        }
    }

    #[test]
    fn bounded_coefficients_never_explode() {
        let coeffs = bounded_coeffs();
        let exp =
            glue_and_detect_explosion(&coeffs, &[50.0, 100.0], &[0.0], 1.0, 2000, 64, 7).unwrap();
        assert!(exp.exploded.iter().all(|&e| !e));
        assert!(exp.zeta.iter().all(|z| z.is_infinite()));
        assert_eq!(exp.agreement_sup, 0.0);
    }

    #[test]
    fn quadratic_drift_blow_up_near_ode_time() {
        // dx/dt = x^2 from 1 blows up at t = 1.
        let coeffs = quadratic_blowup(0.01);
        let exp = glue_and_detect_explosion(
            &coeffs,
            &[5_000.0, 20_000.0, 40_000.0],
            &[1.0],
            1.2,
            12_000,
            64,
            11,
        )
        .unwrap();
        let flagged = exp.exploded.iter().filter(|&&e| e).count();
        assert!(flagged > 56, "only {flagged}/64 flagged");
        let mut zs: Vec<f64> = exp
            .zeta
            .iter()
            .copied()
            .filter(|z| z.is_finite())
            .collect();
        zs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = zs[zs.len() / 2];
        assert!((median - 1.0).abs() < 0.1, "median zeta {median}");
        // nested exits and bitwise agreement before the inner exit
        assert!(exp.agreement_sup <= 1e-12, "agreement {}", exp.agreement_sup);
        for j in 0..64 {
            let mut prev = 0.0;
            for i in 0..exp.levels.len() {
                let e = exp.exit_times[i][j];
                if e.is_finite() {
                    assert!(e >= prev - 1e-12, "exits not nested on path {j}");
                    prev = e;
                }
            }
        }
    }
}
