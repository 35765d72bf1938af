//! Occupation-estimate check: the expected time integral of a test function
//! along paths, divided by the function's mixed norm, should be bounded with
//! a ratio that is exactly scale-invariant and stable as the ensemble grows.

use super::{DiagnosticsReport, StatValue, Verdict};
use crate::error::{CoreError, Result};
use crate::field::SpaceTimeField;
use crate::norms::{check_exponents, mixed_norm, MixedNormParams};
use crate::sde::PathEnsemble;

/// Monte Carlo estimate of the expected path integral of `f` over the window.
fn occupation_estimate(ens: &PathEnsemble, f: &SpaceTimeField, params: &MixedNormParams) -> f64 {
    let m = ens.m_paths();
    let dt = ens.dt;
    let mut x = [0.0f64; 2];
    let mut total = 0.0;
    for j in 0..m {
        let mut acc = 0.0;
        for (r, &t) in ens.times.iter().enumerate() {
            if t < params.s || t >= params.t {
                continue;
            }
            for c in 0..ens.dim {
                x[c] = ens.value(j, r, c);
            }
            acc += f.eval(t, &x[..ens.dim], 0) * dt;
        }
        total += acc;
    }
    total / m as f64
}

/// Run the occupation-ratio battery on an ensemble and its size-doubled
/// companion (same seed, twice the paths). The verdict requires the exponent
/// condition to hold for the claimed drift class (`threshold` 2 for bounded
/// drifts, 1 for integrable ones), the max ratio to stay stable within 25%
/// under the doubling, and exact invariance under rescaling every `f`.
pub fn krylov_check(
    ensemble: &PathEnsemble,
    ensemble_doubled: &PathEnsemble,
    battery: &[SpaceTimeField],
    params: &MixedNormParams,
    threshold: f64,
) -> Result<DiagnosticsReport> {
    if battery.is_empty() {
        return Err(CoreError::InvalidParams("empty test battery".into()));
    }
    let d = ensemble.dim;
    let inputs = serde_json::json!({
        "check": "krylov",
        "seed": ensemble.rng_seed,
        "m": ensemble.m_paths(),
        "m_doubled": ensemble_doubled.m_paths(),
        "scheme": ensemble.scheme_tag,
        "battery_size": battery.len(),
        "p": params.p, "q": params.q, "window": [params.s, params.t],
        "threshold": threshold,
    });
    let mut report = DiagnosticsReport::new("krylov", inputs);
    report.threshold("ratio_rel_change_max", 0.25);
    report.threshold("scale_invariance_rel", 1e-12);

    if !check_exponents(d, params.p, params.q, threshold)? {
        report.verdict = Verdict::Inconclusive;
        report.note(format!(
            "exponent condition violated: d/p + 2/q = {} is not < {threshold}",
            d as f64 / params.p + 2.0 / params.q
        ));
        return Ok(report);
    }

    let mut max_ratio: f64 = 0.0;
    let mut max_ratio_doubled: f64 = 0.0;
    let mut scale_dev: f64 = 0.0;
    let scale = 3.7;
    for (i, f) in battery.iter().enumerate() {
        let norm = mixed_norm(f, params)?;
        let est = occupation_estimate(ensemble, f, params);
        let ratio = if norm > 0.0 { est / norm } else { 0.0 };
        report.stat(&format!("ratio_{i:02}"), StatValue::plain(ratio));
        max_ratio = max_ratio.max(ratio.abs());

        let est2 = occupation_estimate(ensemble_doubled, f, params);
        let ratio2 = if norm > 0.0 { est2 / norm } else { 0.0 };
        max_ratio_doubled = max_ratio_doubled.max(ratio2.abs());

        // exact scale invariance on the scaled field
        let f_scaled = f.scaled(scale);
        let norm_s = mixed_norm(&f_scaled, params)?;
        let est_s = occupation_estimate(ensemble, &f_scaled, params);
        let ratio_s = if norm_s > 0.0 { est_s / norm_s } else { 0.0 };
        if ratio.abs() > 0.0 {
            scale_dev = scale_dev.max(((ratio_s - ratio) / ratio).abs());
        }
    }
    let rel_change = if max_ratio > 0.0 {
        ((max_ratio_doubled - max_ratio) / max_ratio).abs()
    } else {
        0.0
    };
    report.stat("max_ratio", StatValue::plain(max_ratio));
    report.stat("max_ratio_doubled", StatValue::plain(max_ratio_doubled));
    report.stat("ratio_rel_change", StatValue::plain(rel_change));
    report.stat("scale_invariance_dev", StatValue::plain(scale_dev));
    report.verdict = if max_ratio.is_finite() && rel_change <= 0.25 && scale_dev <= 1e-12 {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(report)
}
