//! Semigroup smoothing scan: for bounded measurable test functions, the
//! normalized difference `D(t) = |E phi(X_t(x)) - E phi(X_t(y))| /
//! (||phi|| |x - y|)` should decay like `t^{-1/2}` for small `t`. Starts use
//! independent noise: this is a statement about laws, not paths.

use std::sync::Arc;

use super::{weighted_slope, DiagnosticsReport, StartRunner, StatValue, Verdict};
use crate::error::{CoreError, Result};

#[derive(Clone)]
pub struct PhiSpec {
    pub name: String,
    pub f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    /// Normalization constant for `D(t)`: the sup norm of the test function,
    /// or of its oscillation part when the battery entry carries an affine
    /// shift (the shift cancels in the difference of means).
    pub sup_norm: f64,
}

impl PhiSpec {
    pub fn new(
        name: &str,
        sup_norm: f64,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.to_string(),
            f: Arc::new(f),
            sup_norm,
        }
    }

    /// Indicator of the half-space `x_0 > threshold` (bounded, discontinuous).
    pub fn indicator(threshold: f64) -> Self {
        Self::new(&format!("indicator_gt_{threshold}"), 1.0, move |x| {
            if x[0] > threshold {
                1.0
            } else {
                0.0
            }
        })
    }
}

pub struct FellerConfig {
    /// Recorded step indices forming the time ladder (ascending, nonzero).
    pub ladder_steps: Vec<usize>,
    /// Which battery entry drives the slope verdict (the discontinuous one).
    pub fit_phi: usize,
    pub slope_lo: f64,
    pub slope_hi: f64,
    pub seed_x: u64,
    pub seed_y: u64,
}

/// Scan `D(t)` over the ladder for every test function, fit the log-log slope
/// of the designated entry, and pass when it lands in the configured bracket.
/// When noise drowns the signal the verdict is inconclusive, with the path
/// count needed for a two-sigma detection extrapolated into the notes.
pub fn strong_feller_scan(
    run: StartRunner,
    x: &[f64],
    y: &[f64],
    battery: &[PhiSpec],
    config: &FellerConfig,
) -> Result<DiagnosticsReport> {
    if battery.is_empty() {
        return Err(CoreError::InvalidParams("empty test battery".into()));
    }
    if config.fit_phi >= battery.len() {
        return Err(CoreError::InvalidParams("fit index out of range".into()));
    }
    let sep = x
        .iter()
        .zip(y.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    if sep == 0.0 {
        return Err(CoreError::InvalidParams("starts coincide".into()));
    }
    let ens_x = run(x, config.seed_x)?;
    let ens_y = run(y, config.seed_y)?;
    let d = ens_x.dim;
    let m = ens_x.m_paths() as f64;

    let inputs = serde_json::json!({
        "check": "strong_feller",
        "seed_x": config.seed_x,
        "seed_y": config.seed_y,
        "x": x, "y": y,
        "m": ens_x.m_paths(),
        "scheme": ens_x.scheme_tag,
        "ladder_steps": config.ladder_steps,
        "battery": battery.iter().map(|p| p.name.clone()).collect::<Vec<_>>(),
        "fit_phi": config.fit_phi,
    });
    let mut report = DiagnosticsReport::new("strong_feller", inputs);
    report.threshold("slope_lo", config.slope_lo);
    report.threshold("slope_hi", config.slope_hi);

    let mut log_t = Vec::new();
    let mut log_d = Vec::new();
    let mut log_sigma = Vec::new();
    let mut drowned = false;
    let mut point = [0.0f64; 2];

    for (pi, phi) in battery.iter().enumerate() {
        for (li, &step) in config.ladder_steps.iter().enumerate() {
            let rx = ens_x.rec_index(step).ok_or_else(|| {
                CoreError::InvalidParams(format!("step {step} not recorded by the runner"))
            })?;
            let ry = ens_y.rec_index(step).ok_or_else(|| {
                CoreError::InvalidParams(format!("step {step} not recorded by the runner"))
            })?;
            let t = ens_x.times[rx];
            let eval = |ens: &crate::sde::PathEnsemble, r: usize, point: &mut [f64; 2]| {
                let mut sum = 0.0;
                let mut sum2 = 0.0;
                for j in 0..ens.m_paths() {
                    for c in 0..d {
                        point[c] = ens.value(j, r, c);
                    }
                    let v = (phi.f)(&point[..d]);
                    sum += v;
                    sum2 += v * v;
                }
                let mean = sum / m;
                let var = (sum2 / m - mean * mean).max(0.0);
                (mean, var)
            };
            let (mx, vx) = eval(&ens_x, rx, &mut point);
            let (my, vy) = eval(&ens_y, ry, &mut point);
            let dval = (mx - my).abs() / (phi.sup_norm * sep);
            let dstd = ((vx + vy) / m).sqrt() / (phi.sup_norm * sep);
            report.stat(
                &format!("d_phi{pi}_t{li}"),
                StatValue::with_ci(dval, 1.96 * dstd),
            );
            if pi == config.fit_phi {
                if dval <= 2.0 * dstd {
                    drowned = true;
                    let needed = ens_x.m_paths() as f64 * (2.0 * dstd / dval.max(1e-300)).powi(2);
                    report.note(format!(
                        "signal below noise at t={t}: need roughly m = {:.1e} paths",
                        needed
                    ));
                } else {
                    log_t.push(t.ln());
                    log_d.push(dval.ln());
                    log_sigma.push(dstd / dval);
                }
            }
        }
    }

    if drowned || log_t.len() < 3 {
        report.verdict = Verdict::Inconclusive;
        return Ok(report);
    }
    let (slope, slope_std) = weighted_slope(&log_t, &log_d, &log_sigma);
    report.stat("slope", StatValue::with_ci(slope, 1.96 * slope_std));
    report.verdict = if slope >= config.slope_lo && slope <= config.slope_hi {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(report)
}
