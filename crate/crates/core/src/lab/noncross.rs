//! One-dimensional flow-order check: trajectories started from ordered
//! points and driven by the same noise must stay ordered at every recorded
//! time, and the reciprocal pair separation must stay finite.

use super::{DiagnosticsReport, StatValue, Verdict};
use crate::error::{CoreError, Result};
use crate::sde::PathEnsemble;

/// `ensembles` pairs each start with its common-noise ensemble, in strictly
/// increasing start order. All ensembles must share the seed, the recording,
/// and the path count.
pub fn noncrossing_check(
    ensembles: &[(f64, PathEnsemble)],
    label: &str,
) -> Result<DiagnosticsReport> {
    if ensembles.len() < 2 {
        return Err(CoreError::InvalidParams("need at least two starts".into()));
    }
    let first = &ensembles[0].1;
    if first.dim != 1 {
        return Err(CoreError::InvalidParams(
            "order checking is a one-dimensional statement".into(),
        ));
    }
    let m = first.m_paths();
    let n_rec = first.n_recorded();
    let seed = first.rng_seed;
    for w in ensembles.windows(2) {
        if w[0].0 >= w[1].0 {
            return Err(CoreError::InvalidParams("starts must be increasing".into()));
        }
    }
    for (_, e) in ensembles {
        if e.m_paths() != m || e.n_recorded() != n_rec || e.rng_seed != seed {
            return Err(CoreError::InvalidParams(
                "ensembles disagree on paths, recording, or seed".into(),
            ));
        }
    }

    let starts: Vec<f64> = ensembles.iter().map(|(s, _)| *s).collect();
    let inputs = serde_json::json!({
        "check": "noncrossing",
        "seed": seed,
        "m": m,
        "starts": starts,
        "scheme": first.scheme_tag,
        "label": label,
    });
    let mut report = DiagnosticsReport::new("noncrossing", inputs);
    report.threshold("violations_max", 0.0);

    let mut violations = 0usize;
    let mut flagged = 0usize;
    let mut r_max: f64 = 0.0;
    for j in 0..m {
        if ensembles.iter().any(|(_, e)| !e.status[j].is_ok()) {
            flagged += 1;
            continue;
        }
        for r in 0..n_rec {
            for w in ensembles.windows(2) {
                let lo = w[0].1.value(j, r, 0);
                let hi = w[1].1.value(j, r, 0);
                if lo >= hi {
                    violations += 1;
                } else {
                    r_max = r_max.max(1.0 / (hi - lo));
                }
            }
        }
    }
    report.stat("violations", StatValue::plain(violations as f64));
    report.stat("reciprocal_gap_max", StatValue::plain(r_max));
    report.stat("flagged_paths", StatValue::plain(flagged as f64));
    report.verdict = if violations == 0 && r_max.is_finite() {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(report)
}
