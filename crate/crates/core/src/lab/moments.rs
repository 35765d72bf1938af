//! Two-point moment check: with common noise, the moments
//! `E |X_t(x) - X_t(y)|^{2 gamma}` should scale like `|x - y|^{2 gamma}`
//! across a ladder of separations, including negative exponents (the
//! numerical echo of non-coalescence).

use super::{DiagnosticsReport, StartRunner, StatValue, Verdict};
use crate::error::{CoreError, Result};

/// Relative-coincidence floor: pairs closer than this times the initial
/// separation are treated as coalesced.
const COINCIDENCE_FLOOR: f64 = 1e-14;

pub fn two_point_moments(
    run: StartRunner,
    seed: u64,
    x: &[f64],
    separations: &[f64],
    gammas: &[f64],
    label: &str,
) -> Result<DiagnosticsReport> {
    if separations.is_empty() || gammas.is_empty() {
        return Err(CoreError::InvalidParams(
            "need at least one separation and one exponent".into(),
        ));
    }
    let inputs = serde_json::json!({
        "check": "two_point_moments",
        "seed": seed,
        "x": x,
        "separations": separations,
        "gammas": gammas,
        "label": label,
    });
    let mut report = DiagnosticsReport::new("two_point_moments", inputs);
    report.threshold("ratio_spread_max", 3.0);
    report.threshold("coincidences_max", 0.0);

    let base = run(x, seed)?;
    let d = base.dim;
    let m = base.m_paths();
    let mut coincidences = 0usize;
    let mut worst_spread: f64 = 0.0;

    for &gamma in gammas {
        let mut ratios = Vec::with_capacity(separations.len());
        for (si, &eta) in separations.iter().enumerate() {
            let mut y = x.to_vec();
            y[0] += eta;
            let shifted = run(&y, seed)?;
            if shifted.m_paths() != m {
                return Err(CoreError::InvalidParams(
                    "runner returned mismatched ensemble sizes".into(),
                ));
            }
            let mut acc = 0.0;
            let mut used = 0usize;
            for j in 0..m {
                if !(base.status[j].is_ok() && shifted.status[j].is_ok()) {
                    continue;
                }
                let mut dist2 = 0.0;
                for c in 0..d {
                    let diff = base.terminal(j, c) - shifted.terminal(j, c);
                    dist2 += diff * diff;
                }
                let dist = dist2.sqrt();
                if gamma < 0.0 && dist <= COINCIDENCE_FLOOR * eta {
                    coincidences += 1;
                    continue;
                }
                acc += dist.powf(2.0 * gamma);
                used += 1;
            }
            let moment = acc / used.max(1) as f64;
            let ratio = moment / eta.powf(2.0 * gamma);
            ratios.push(ratio);
            report.stat(
                &format!("ratio_g{gamma:+.1}_s{si:02}"),
                StatValue::plain(ratio),
            );
        }
        let (lo, hi) = ratios
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
        let spread = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        report.stat(&format!("spread_g{gamma:+.1}"), StatValue::plain(spread));
        worst_spread = worst_spread.max(spread);
    }
    report.stat("coincidences", StatValue::plain(coincidences as f64));
    report.verdict = if worst_spread <= 3.0 && coincidences == 0 {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{CoefficientSet, DriftSpec, MatrixFn, SigmaSpec, VectorFn};
    use crate::grid::UniformGrid;
    use crate::sde::{euler_direct, BrownianSource, SimOptions};
    use std::sync::Arc;

    #[test]
    fn constant_sigma_gives_unit_ratio_for_every_gamma() {
        // X_t(x) - X_t(y) = x - y exactly under common noise.
        let grid = UniformGrid::new(1, 0.0, 1.0, 100, 10.0, 101).unwrap();
        let run = |start: &[f64], seed: u64| {
            let coeffs = CoefficientSet::constant(1, 0.0, 1.0, &grid)?;
            let src = BrownianSource::from_grid(seed, &grid);
            euler_direct(&coeffs, start, &grid, &src, 200, &SimOptions::default())
        };
        let report = two_point_moments(
            &run,
            42,
            &[0.0],
            &[0.01, 0.02, 0.04, 0.08, 0.16],
            &[1.0, -1.0],
            "constant-sigma",
        )
        .unwrap();
        assert_eq!(report.verdict, Verdict::Pass);
        for (k, v) in &report.statistics {
            if k.starts_with("ratio_") {
                assert!((v.value - 1.0).abs() < 1e-9, "{k}: {}", v.value);
            }
        }
        assert_eq!(report.statistics["coincidences"].value, 0.0);
    }

    #[test]
    fn lipschitz_sigma_ratio_obeys_growth_bound() {
        // d|Z|^2 <= Lip^2 |Z|^2 dt in expectation, so the gamma=1 ratio stays
        // under exp(Lip^2 t) up to sampling noise.
        let grid = UniformGrid::new(1, 0.0, 1.0, 400, 12.0, 241).unwrap();
        for lip in [0.25, 0.5] {
            let grid = grid.clone();
            let run = move |start: &[f64], seed: u64| {
                let sig: MatrixFn =
                    Arc::new(move |_t, x: &[f64], out: &mut [f64]| out[0] = 2.0 + lip * x[0].sin());
                let drift: VectorFn = Arc::new(|_t, _x, out| out[0] = 0.0);
                let coeffs = CoefficientSet::new(
                    1,
                    DriftSpec::Analytic(drift),
                    SigmaSpec::Analytic(sig),
                    (2.0 - lip) * (2.0 - lip) * 0.999,
                    (2.0 + lip) * (2.0 + lip) * 1.001,
                    &grid,
                )?;
                let src = BrownianSource::from_grid(seed, &grid);
                euler_direct(&coeffs, start, &grid, &src, 4000, &SimOptions::default())
            };
            let report =
                two_point_moments(&run, 7, &[0.0], &[0.05], &[1.0], "lipschitz").unwrap();
            let ratio = report.statistics["ratio_g+1.0_s00"].value;
            let bound = (lip * lip * 1.0f64).exp() * 1.05;
            assert!(ratio <= bound, "lip={lip}: ratio {ratio} > {bound}");
        }
    }

    #[test]
    fn smooth_sigma_negative_moment_stable_across_ladder() {
        let grid = UniformGrid::new(1, 0.0, 1.0, 250, 12.0, 241).unwrap();
        let run = |start: &[f64], seed: u64| {
            let sig: MatrixFn =
                Arc::new(|_t, x: &[f64], out: &mut [f64]| out[0] = 2.0 + x[0].sin());
            let drift: VectorFn = Arc::new(|_t, _x, out| out[0] = 0.0);
            let coeffs = CoefficientSet::new(
                1,
                DriftSpec::Analytic(drift),
                SigmaSpec::Analytic(sig),
                0.999,
                9.001,
                &grid,
            )?;
            let src = BrownianSource::from_grid(seed, &grid);
            euler_direct(&coeffs, start, &grid, &src, 2000, &SimOptions::default())
        };
        let seps: Vec<f64> = (0..5).map(|i| 0.02 * 2f64.powi(i)).collect();
        let report =
            two_point_moments(&run, 99, &[0.0], &seps, &[-1.0], "smooth-sigma").unwrap();
        assert_eq!(report.verdict, Verdict::Pass, "{:?}", report.statistics);
    }
}
