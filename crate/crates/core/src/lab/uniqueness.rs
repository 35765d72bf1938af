//! Pathwise-coincidence witness: two constructions of the same dynamics
//! driven by identical noise should land on the same paths, with the
//! discrepancy shrinking along a refinement ladder.

use super::{DiagnosticsReport, StatValue, Verdict};
use crate::error::{CoreError, Result};
use crate::sde::PathEnsemble;

/// Sup over recorded times of the mean distance between paired paths.
fn family_distance(a: &PathEnsemble, b: &PathEnsemble) -> Result<f64> {
    if a.m_paths() != b.m_paths() || a.rng_seed != b.rng_seed {
        return Err(CoreError::InvalidParams(
            "families must pair path-for-path under the same seed".into(),
        ));
    }
    let d = a.dim;
    let mut sup: f64 = 0.0;
    // compare on the common recorded times
    for (ra, &ta) in a.times.iter().enumerate() {
        let Some(rb) = b.times.iter().position(|&tb| (tb - ta).abs() < 1e-12) else {
            continue;
        };
        let mut acc = 0.0;
        let mut used = 0usize;
        for j in 0..a.m_paths() {
            if !(a.status[j].is_ok() && b.status[j].is_ok()) {
                continue;
            }
            let mut dist2 = 0.0;
            for c in 0..d {
                let diff = a.value(j, ra, c) - b.value(j, rb, c);
                dist2 += diff * diff;
            }
            acc += dist2.sqrt();
            used += 1;
        }
        if used > 0 {
            sup = sup.max(acc / used as f64);
        }
    }
    Ok(sup)
}

/// `ladder` pairs two constructions per refinement level, coarsest first.
/// The verdict asks for a non-increasing distance down the ladder and the
/// finest level below the tolerance.
pub fn uniqueness_witness(
    ladder: &[(String, PathEnsemble, PathEnsemble)],
    tolerance: f64,
) -> Result<DiagnosticsReport> {
    if ladder.is_empty() {
        return Err(CoreError::InvalidParams("empty refinement ladder".into()));
    }
    let inputs = serde_json::json!({
        "check": "uniqueness",
        "levels": ladder.iter().map(|(l, _, _)| l.clone()).collect::<Vec<_>>(),
        "seed": ladder[0].1.rng_seed,
        "m": ladder[0].1.m_paths(),
        "tolerance": tolerance,
    });
    let mut report = DiagnosticsReport::new("uniqueness", inputs);
    report.threshold("final_distance_max", tolerance);

    let mut distances = Vec::with_capacity(ladder.len());
    for (label, a, b) in ladder {
        let dist = family_distance(a, b)?;
        report.stat(&format!("distance_{label}"), StatValue::plain(dist));
        distances.push(dist);
    }
    let monotone = distances.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9));
    let final_ok = *distances.last().unwrap() <= tolerance;
    report.stat(
        "monotone_decrease",
        StatValue::plain(monotone as u8 as f64),
    );
    report.verdict = if monotone && final_ok {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(report)
}
