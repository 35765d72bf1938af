//! Gradient-by-noise-weight estimator for driftless dynamics: the spatial
//! derivative of the semigroup is represented as
//! `(1/t) E[ phi(Y_t) int_0^t (sigma^{-1} D_s) . dW_s ]`, where `D` is the
//! first-variation flow. The estimator is cross-checked against a
//! common-noise central finite difference, and needs no derivative of `phi`.

use rayon::prelude::*;

use super::{mean_ci, weighted_slope, DiagnosticsReport, PhiSpec, StatValue, Verdict};
use crate::error::{CoreError, Result};
use crate::field::{FieldRank, SpaceTimeField};
use crate::sde::BrownianSource;

pub struct BelConfig {
    pub m: usize,
    pub seed: u64,
    /// Step count of the evaluation horizon (time `t = n_steps * dt`).
    pub n_steps: usize,
    /// Offset for the central finite difference.
    pub fd_lambda: f64,
    /// Ladder of step counts for the estimator-deviation scaling fit.
    pub std_ladder: Vec<usize>,
    pub std_slope_lo: f64,
    pub std_slope_hi: f64,
    /// Gate the verdict on the deviation slope. Only meaningful for bounded
    /// test functions, where the deviation grows like `t^{-1/2}`.
    pub check_std_slope: bool,
}

struct PathWeights {
    /// `phi(Y_t) * I_t / t` per horizon in the ladder.
    weights: Vec<f64>,
    /// finite-difference sample at the main horizon
    fd: f64,
}

fn invert_sigma(sig: &[f64], d: usize, out: &mut [f64]) -> bool {
    match d {
        1 => {
            if sig[0].abs() < 1e-14 {
                return false;
            }
            out[0] = 1.0 / sig[0];
            true
        }
        2 => {
            let det = sig[0] * sig[3] - sig[1] * sig[2];
            if det.abs() < 1e-14 {
                return false;
            }
            out[0] = sig[3] / det;
            out[1] = -sig[1] / det;
            out[2] = -sig[2] / det;
            out[3] = sig[0] / det;
            true
        }
        _ => unreachable!(),
    }
}

/// Run the estimator at `x` in direction `h` for the given test function,
/// comparing against the common-noise finite difference. The verdict passes
/// when the two 95% intervals overlap and the estimator deviation scales like
/// `t^{-1/2}` across the ladder (within the configured bracket).
pub fn bel_gradient(
    sigma_field: &SpaceTimeField,
    x: &[f64],
    h: &[f64],
    phi: &PhiSpec,
    config: &BelConfig,
) -> Result<DiagnosticsReport> {
    let grid = sigma_field.grid().clone();
    let d = grid.dim;
    if sigma_field.rank() != FieldRank::Matrix {
        return Err(CoreError::InvalidField(
            "the estimator needs a matrix diffusion field".into(),
        ));
    }
    if config.n_steps > grid.n_time || config.std_ladder.iter().any(|&s| s > grid.n_time) {
        return Err(CoreError::InvalidParams(
            "horizon exceeds the field's time grid".into(),
        ));
    }
    let dt = grid.dt();
    let inputs = serde_json::json!({
        "check": "bel_gradient",
        "seed": config.seed,
        "m": config.m,
        "x": x, "h": h,
        "phi": phi.name,
        "n_steps": config.n_steps,
        "fd_lambda": config.fd_lambda,
        "std_ladder": config.std_ladder,
    });
    let mut report = DiagnosticsReport::new("bel_gradient", inputs);
    report.threshold("std_slope_lo", config.std_slope_lo);
    report.threshold("std_slope_hi", config.std_slope_hi);

    // per-axis gradients of sigma, shared across paths
    let mut grad_sigma = Vec::with_capacity(d);
    for axis in 0..d {
        let mut gf = SpaceTimeField::zeros(&grid, FieldRank::Matrix);
        for k in 0..grid.n_slices() {
            for p in 0..grid.n_points() {
                for c in 0..d * d {
                    let v = sigma_field.derivative_at(k, p, c, axis);
                    gf.set(k, p, c, v);
                }
            }
        }
        grad_sigma.push(gf);
    }

    let mut horizons = config.std_ladder.clone();
    if !horizons.contains(&config.n_steps) {
        horizons.push(config.n_steps);
    }
    horizons.sort_unstable();
    horizons.dedup();
    let main_pos = horizons
        .iter()
        .position(|&s| s == config.n_steps)
        .expect("main horizon present");
    let max_steps = *horizons.last().unwrap();
    let source = BrownianSource::new(config.seed, grid.n_time, d, dt);
    let lambda = config.fd_lambda;

    let rows: Vec<PathWeights> = (0..config.m)
        .into_par_iter()
        .map(|j| {
            let mut dw = vec![0.0; grid.n_time * d];
            source.fill_path(j, &mut dw);
            let mut y = [0.0f64; 2];
            let mut yu = [0.0f64; 2];
            let mut yd = [0.0f64; 2];
            let mut dv = [0.0f64; 2];
            let mut sig = [0.0f64; 4];
            let mut sig_inv = [0.0f64; 4];
            let mut tmp = [0.0f64; 2];
            y[..d].copy_from_slice(&x[..d]);
            for c in 0..d {
                yu[c] = x[c] + lambda * h[c];
                yd[c] = x[c] - lambda * h[c];
            }
            dv[..d].copy_from_slice(&h[..d]);
            let mut integral = 0.0;
            let mut weights = Vec::with_capacity(horizons.len());
            let mut fd = 0.0;
            let mut hz = 0usize;
            for k in 0..max_steps {
                let dwk = &dw[k * d..(k + 1) * d];
                // noise weight increment: (sigma^{-1}(t, Y) D) . dW
                sigma_field.eval_all(grid.time(k), &y[..d], &mut sig[..d * d]);
                if invert_sigma(&sig[..d * d], d, &mut sig_inv[..d * d]) {
                    for i in 0..d {
                        let mut acc = 0.0;
                        for c in 0..d {
                            acc += sig_inv[i * d + c] * dv[c];
                        }
                        tmp[i] = acc;
                    }
                    for c in 0..d {
                        integral += tmp[c] * dwk[c];
                    }
                }
                // first variation step
                for i in 0..d {
                    let mut acc = dv[i];
                    for w in 0..d {
                        let mut coef = 0.0;
                        for l in 0..d {
                            coef += grad_sigma[l].eval_slice(k, &y[..d], i * d + w) * dv[l];
                        }
                        acc += coef * dwk[w];
                    }
                    tmp[i] = acc;
                }
                dv[..d].copy_from_slice(&tmp[..d]);
                // base and shifted states
                for (state, _) in [(&mut y, 0), (&mut yu, 1), (&mut yd, 2)] {
                    sigma_field.eval_all(grid.time(k), &state[..d], &mut sig[..d * d]);
                    for i in 0..d {
                        let mut acc = state[i];
                        for c in 0..d {
                            acc += sig[i * d + c] * dwk[c];
                        }
                        tmp[i] = acc;
                    }
                    state[..d].copy_from_slice(&tmp[..d]);
                }
                if k + 1 == horizons[hz] {
                    let t = (k + 1) as f64 * dt;
                    weights.push((phi.f)(&y[..d]) * integral / t);
                    if k + 1 == config.n_steps {
                        fd = ((phi.f)(&yu[..d]) - (phi.f)(&yd[..d])) / (2.0 * lambda);
                    }
                    hz += 1;
                }
            }
            PathWeights { weights, fd }
        })
        .collect();

    // main-horizon comparison
    let bel_samples: Vec<f64> = rows.iter().map(|r| r.weights[main_pos]).collect();
    let fd_samples: Vec<f64> = rows.iter().map(|r| r.fd).collect();
    let (bel_mean, bel_hw) = mean_ci(&bel_samples);
    let (fd_mean, fd_hw) = mean_ci(&fd_samples);
    report.stat("bel_estimate", StatValue::with_ci(bel_mean, bel_hw));
    report.stat("fd_estimate", StatValue::with_ci(fd_mean, fd_hw));
    let overlap = (bel_mean - fd_mean).abs() <= bel_hw + fd_hw;

    // deviation scaling across the ladder
    let mut log_t = Vec::new();
    let mut log_std = Vec::new();
    let mut sigmas = Vec::new();
    for (pos, &steps) in horizons.iter().enumerate() {
        let vals: Vec<f64> = rows.iter().map(|r| r.weights[pos]).collect();
        let (mean, _) = mean_ci(&vals);
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() as f64 - 1.0);
        let std = var.sqrt();
        let t = steps as f64 * dt;
        report.stat(&format!("std_at_{steps}"), StatValue::plain(std));
        if std > 0.0 {
            log_t.push(t.ln());
            log_std.push(std.ln());
            // relative error of a sample std is about 1/sqrt(2(m-1))
            sigmas.push(1.0 / (2.0 * (vals.len() as f64 - 1.0)).sqrt());
        }
    }
    let mut slope_ok = true;
    if log_t.len() >= 3 {
        let (slope, slope_std) = weighted_slope(&log_t, &log_std, &sigmas);
        report.stat("std_slope", StatValue::with_ci(slope, 1.96 * slope_std));
        if config.check_std_slope {
            slope_ok = slope >= config.std_slope_lo && slope <= config.std_slope_hi;
        }
    }
    report.verdict = if overlap && slope_ok {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::UniformGrid;

    fn field(grid: &UniformGrid, f: impl Fn(f64) -> f64) -> SpaceTimeField {
        SpaceTimeField::from_fn(grid, FieldRank::Matrix, |_, x, _| f(x[0]))
    }

    fn config(m: usize, n_steps: usize, ladder: Vec<usize>) -> BelConfig {
        BelConfig {
            m,
            seed: 314,
            n_steps,
            fd_lambda: 1e-4,
            std_ladder: ladder,
            std_slope_lo: -0.7,
            std_slope_hi: -0.3,
            check_std_slope: false,
        }
    }

    #[test]
    fn linear_phi_constant_sigma_recovers_gradient() {
        // E phi(x + sigma W_t) = phi(x) for linear phi, so the gradient is
        // phi' = 2 exactly.
        let grid = UniformGrid::new(1, 0.0, 1.0, 250, 25.0, 126).unwrap();
        let sigma = field(&grid, |_| 1.0);
        let phi = PhiSpec::new("linear", 50.0, |x| 2.0 * x[0]);
        let cfg = config(20_000, 250, vec![25, 50, 100, 250]);
        let report = bel_gradient(&sigma, &[0.0], &[1.0], &phi, &cfg).unwrap();
        let est = report.statistics["bel_estimate"].value;
        let hw = report.statistics["bel_estimate"].ci_high.unwrap() - est;
        assert!((est - 2.0).abs() <= hw + 1e-9, "estimate {est} +- {hw}");
        assert_eq!(report.verdict, Verdict::Pass, "{:?}", report.statistics);
    }

    #[test]
    fn constant_phi_gives_zero_within_ci() {
        let grid = UniformGrid::new(1, 0.0, 1.0, 100, 25.0, 126).unwrap();
        let sigma = field(&grid, |_| 1.0);
        let phi = PhiSpec::new("constant", 1.0, |_| 1.0);
        let cfg = config(5_000, 100, vec![25, 50, 100]);
        let report = bel_gradient(&sigma, &[0.0], &[1.0], &phi, &cfg).unwrap();
        let est = report.statistics["bel_estimate"].value;
        let hw = report.statistics["bel_estimate"].ci_high.unwrap() - est;
        assert!(est.abs() <= hw, "estimate {est} +- {hw}");
    }

    #[test]
    fn deviation_grows_like_inverse_sqrt_t() {
        let grid = UniformGrid::new(1, 0.0, 1.0, 256, 25.0, 126).unwrap();
        let sigma = field(&grid, |x| 2.0 + (0.2 * x).sin());
        let phi = PhiSpec::indicator(0.0);
        let cfg = BelConfig {
            m: 20_000,
            seed: 11,
            n_steps: 256,
            fd_lambda: 1e-4,
            std_ladder: vec![16, 32, 64, 128, 256],
            std_slope_lo: -0.7,
            std_slope_hi: -0.3,
            check_std_slope: true,
        };
        let report = bel_gradient(&sigma, &[0.0], &[1.0], &phi, &cfg).unwrap();
        let slope = report.statistics["std_slope"].value;
        assert!((slope + 0.5).abs() < 0.2, "std slope {slope}");
    }
}
