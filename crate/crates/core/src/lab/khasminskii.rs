//! Exponential-moment check for additive path functionals: when small-window
//! occupation averages are small, `E exp(lambda int beta)` stays finite. The
//! window proxy `kappa` is measured, and stability is asserted for rates
//! below its reciprocal.

use super::{DiagnosticsReport, StatValue, Verdict};
use crate::error::{CoreError, Result};
use crate::sde::PathEnsemble;

/// `beta` evaluates the nonnegative integrand at `(t, state)`. The ensemble
/// must be recorded at every step. `window_steps` sets the sliding window for
/// the rate proxy.
pub fn khasminskii_moment(
    ensemble: &PathEnsemble,
    beta: &(dyn Fn(f64, &[f64]) -> f64 + Sync),
    lambdas: &[f64],
    window_steps: usize,
) -> Result<DiagnosticsReport> {
    if lambdas.is_empty() {
        return Err(CoreError::InvalidParams("empty rate ladder".into()));
    }
    let m = ensemble.m_paths();
    let n_rec = ensemble.n_recorded();
    if window_steps == 0 || window_steps >= n_rec {
        return Err(CoreError::InvalidParams(
            "window must be positive and shorter than the horizon".into(),
        ));
    }
    let inputs = serde_json::json!({
        "check": "khasminskii",
        "seed": ensemble.rng_seed,
        "m": m,
        "scheme": ensemble.scheme_tag,
        "lambdas": lambdas,
        "window_steps": window_steps,
    });
    let mut report = DiagnosticsReport::new("khasminskii", inputs);
    report.threshold("rel_change_max", 0.25);

    // per-path integrals and windowed means
    let dt = ensemble.dt;
    let d = ensemble.dim;
    let mut x = [0.0f64; 2];
    let mut integrals = Vec::with_capacity(m);
    let mut window_mean = vec![0.0; n_rec.saturating_sub(window_steps)];
    for j in 0..m {
        let mut vals = Vec::with_capacity(n_rec);
        for r in 0..n_rec {
            for c in 0..d {
                x[c] = ensemble.value(j, r, c);
            }
            let v = beta(ensemble.times[r], &x[..d]);
            debug_assert!(v >= 0.0, "integrand must be nonnegative");
            vals.push(v);
        }
        let total: f64 = vals[..n_rec - 1].iter().map(|v| v * dt).sum();
        integrals.push(total);
        for (w, slot) in window_mean.iter_mut().enumerate() {
            let sum: f64 = vals[w..w + window_steps].iter().map(|v| v * dt).sum();
            *slot += sum / m as f64;
        }
    }
    let kappa = window_mean.iter().cloned().fold(0.0f64, f64::max);
    let lambda_admissible = if kappa > 0.0 { 1.0 / kappa } else { f64::INFINITY };
    report.stat("kappa_proxy", StatValue::plain(kappa));
    report.stat("lambda_admissible", StatValue::plain(lambda_admissible));

    let half = m / 2;
    let mut pass = true;
    for (li, &lambda) in lambdas.iter().enumerate() {
        // overflow is evidence about the rate, not a crash
        let exps: Vec<f64> = integrals.iter().map(|&i| (lambda * i).exp()).collect();
        let overflow = exps.iter().any(|v| !v.is_finite());
        if overflow {
            report.stat(&format!("moment_l{li}"), StatValue::plain(f64::INFINITY));
            report.note(format!("lambda {lambda} overflows the exponential moment"));
            if lambda <= lambda_admissible {
                pass = false;
            }
            continue;
        }
        let full = exps.iter().sum::<f64>() / m as f64;
        let first = exps[..half].iter().sum::<f64>() / half as f64;
        let rel_change = ((full - first) / full).abs();
        report.stat(&format!("moment_l{li}"), StatValue::plain(full));
        report.stat(
            &format!("moment_l{li}_rel_change"),
            StatValue::plain(rel_change),
        );
        if lambda <= lambda_admissible && (!full.is_finite() || rel_change > 0.25) {
            pass = false;
        }
    }
    // monotonicity in the rate
    let moments: Vec<f64> = (0..lambdas.len())
        .map(|li| report.statistics[&format!("moment_l{li}")].value)
        .collect();
    let monotone = moments.windows(2).all(|w| w[0] <= w[1] * (1.0 + 1e-12));
    report.stat("monotone_in_lambda", StatValue::plain(monotone as u8 as f64));
    report.verdict = if pass && monotone {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(report)
}
