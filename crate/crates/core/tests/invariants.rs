//! Cross-module invariants: solver boundedness echo, reproducibility of
//! simulators and reports, and harness edge verdicts.

use std::sync::Arc;

use zvonkin_core::*;

/// Random bump battery with fixed shape family, varying center, amplitude,
/// and time modulation.
fn bump_battery(grid: &UniformGrid, seed: u64, count: usize) -> Vec<SpaceTimeField> {
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let center: f64 = rng.gen_range(-2.0..2.0);
            let amp: f64 = rng.gen_range(0.25..4.0);
            let tmod: f64 = rng.gen_range(0.0..0.8);
            SpaceTimeField::from_fn(grid, FieldRank::Scalar, move |t, x, _| {
                let r = (x[0] - center).powi(2);
                if r < 1.0 {
                    amp * (1.0 - 1.0 / (1.0 - r)).exp() * (1.0 + tmod * (2.0 * t).cos())
                } else {
                    0.0
                }
            })
        })
        .collect()
}

#[test]
fn solver_boundedness_echo_is_stable_across_batteries() {
    // sup |u| / mixed_norm(f) measured over two independently drawn source
    // batteries on the same grid and coefficients: one constant describes
    // both, within twenty percent.
    let grid = UniformGrid::new(1, 0.0, 1.0, 200, 6.0, 241).unwrap();
    let coeffs = CoefficientSet::constant(1, 0.3, 1.0, &grid).unwrap();
    let params = MixedNormParams::new(4.0, 8.0, 0.0, 1.0).unwrap();
    let measure = |battery: &[SpaceTimeField]| -> f64 {
        battery
            .iter()
            .map(|f| {
                let problem = PdeProblem::new(coeffs.clone(), f.clone(), 4.0, 8.0).unwrap();
                let sol = solve_backward(&problem, Scheme::ImplicitEuler).unwrap();
                sol.norm_report.sup_u / mixed_norm(f, &params).unwrap()
            })
            .fold(0.0, f64::max)
    };
    let c1 = measure(&bump_battery(&grid, 101, 8));
    let c2 = measure(&bump_battery(&grid, 202, 8));
    let rel = (c1 - c2).abs() / c1.max(c2);
    assert!(
        rel <= 0.2,
        "measured constants {c1:.4} vs {c2:.4} differ by {:.0}%",
        rel * 100.0
    );
}

#[test]
fn simulators_are_bit_reproducible() {
    let grid = UniformGrid::new(1, 0.0, 1.0, 200, 8.0, 201).unwrap();
    let coeffs = CoefficientSet::constant(1, 0.4, 1.0, &grid).unwrap();
    let src = BrownianSource::from_grid(99, &grid);
    let opts = SimOptions::default();
    let a = euler_direct(&coeffs, &[0.1], &grid, &src, 64, &opts).unwrap();
    let b = euler_direct(&coeffs, &[0.1], &grid, &src, 64, &opts).unwrap();
    assert_eq!(a.states, b.states);

    let chain = partition(&coeffs, &grid, 4.0, 8.0, Scheme::ImplicitEuler).unwrap();
    let ta = zvonkin_simulate(&chain, &coeffs, &[0.1], &src, 64, &opts).unwrap();
    let tb = zvonkin_simulate(&chain, &coeffs, &[0.1], &src, 64, &opts).unwrap();
    assert_eq!(ta.states, tb.states);
}

#[test]
fn reports_are_bit_reproducible() {
    let grid = UniformGrid::new(1, 0.0, 1.0, 100, 6.0, 121).unwrap();
    let coeffs = CoefficientSet::constant(1, 0.0, 1.0, &grid).unwrap();
    let src = BrownianSource::from_grid(5, &grid);
    let opts = SimOptions {
        retain_increments: false,
        ..Default::default()
    };
    let make = || {
        let ens = euler_direct(&coeffs, &[0.0], &grid, &src, 200, &opts).unwrap();
        let ens2 = euler_direct(&coeffs, &[0.0], &grid, &src, 400, &opts).unwrap();
        let battery = bump_battery(&grid, 7, 3);
        let params = MixedNormParams::new(4.0, 8.0, 0.0, 1.0).unwrap();
        let report = lab::krylov_check(&ens, &ens2, &battery, &params, 2.0).unwrap();
        serde_json::to_string(&report).unwrap()
    };
    assert_eq!(make(), make());
}

#[test]
fn feller_scan_reports_inconclusive_when_noise_drowns_signal() {
    let grid = UniformGrid::new(1, 0.0, 0.64, 64, 30.0, 61).unwrap();
    let run = |start: &[f64], seed: u64| {
        let coeffs = CoefficientSet::constant(1, 0.0, 1.0, &grid)?;
        let src = BrownianSource::from_grid(seed, &grid);
        let opts = SimOptions {
            record: RecordSteps::At(vec![16, 32, 64]),
            retain_increments: false,
            ..Default::default()
        };
        euler_direct(&coeffs, start, &grid, &src, 50, &opts)
    };
    let config = lab::FellerConfig {
        ladder_steps: vec![16, 32, 64],
        fit_phi: 0,
        slope_lo: -0.65,
        slope_hi: -0.35,
        seed_x: 1,
        seed_y: 2,
    };
    // separation far below what 50 paths can resolve
    let report = lab::strong_feller_scan(
        &run,
        &[5e-4],
        &[-5e-4],
        &[lab::PhiSpec::indicator(0.0)],
        &config,
    )
    .unwrap();
    assert_eq!(report.verdict, Verdict::Inconclusive);
    assert!(
        report.notes.iter().any(|n| n.contains("need roughly")),
        "{:?}",
        report.notes
    );
}

#[test]
fn variational_flow_requires_full_recording() {
    let grid = UniformGrid::new(1, 0.0, 1.0, 50, 8.0, 81).unwrap();
    let sigma = SpaceTimeField::from_fn(&grid, FieldRank::Matrix, |_, _, _| 1.0);
    let src = BrownianSource::from_grid(3, &grid);
    let opts = SimOptions {
        record: RecordSteps::At(vec![0, 50]),
        retain_increments: false,
        ..Default::default()
    };
    let sparse = euler_driftless(&sigma, &[0.0], &src, 8, &opts).unwrap();
    assert!(variational_flow(&sigma, &sparse, &[1.0]).is_err());
}

#[test]
fn quadratic_variation_identity_on_a_transformed_diffusion() {
    // The transformed field from a drift-carrying chain must still satisfy
    // the pathwise identity sum |dY|^2 = int tr(Sigma Sigma^T) dt.
    let g = UniformGrid::new(1, 0.0, 0.64, 640, 6.0, 301).unwrap();
    let sig: MatrixFn = Arc::new(|_t, x: &[f64], out: &mut [f64]| out[0] = 1.0 + 0.25 * x[0].sin());
    let drift: VectorFn = Arc::new(|_t, x: &[f64], out: &mut [f64]| out[0] = 0.5 * x[0].cos());
    let coeffs = CoefficientSet::new(
        1,
        DriftSpec::Analytic(drift),
        SigmaSpec::Analytic(sig),
        0.5619,
        1.5641,
        &g,
    )
    .unwrap();
    let chain = partition(&coeffs, &g, 4.0, 8.0, Scheme::ImplicitEuler).unwrap();
    assert_eq!(chain.segments.len(), 1);
    let field = &chain.segments[0].sigma_transformed;
    let src = BrownianSource::from_grid(747, &g);
    let m = 2000;
    let ens = euler_driftless(field, &[0.1], &src, m, &SimOptions::default()).unwrap();
    let mut qv = 0.0;
    let mut integral = 0.0;
    let mut dw = vec![0.0; g.n_time];
    for j in 0..m {
        src.fill_path(j, &mut dw);
        for k in 0..g.n_time {
            let y = ens.value(j, k, 0);
            let s = field.eval_slice(k, &[y], 0);
            qv += (s * dw[k]).powi(2);
            integral += s * s * g.dt();
        }
    }
    let ratio = qv / integral;
    assert!((ratio - 1.0).abs() < 0.05, "qv ratio {ratio}");
}

#[test]
fn exploded_exit_times_are_nested_across_levels() {
    let probe = UniformGrid::new(1, 0.0, 1.0, 4, 8.0, 17).unwrap();
    let drift: VectorFn = Arc::new(|_t, x: &[f64], out: &mut [f64]| out[0] = x[0] * x[0]);
    let sig: MatrixFn = Arc::new(|_t, _x, out: &mut [f64]| out[0] = 0.01);
    let coeffs = CoefficientSet::new(
        1,
        DriftSpec::Analytic(drift),
        SigmaSpec::Analytic(sig),
        1e-4 * 0.999,
        1e-4 * 1.001,
        &probe,
    )
    .unwrap();
    let exp = glue_and_detect_explosion(
        &coeffs,
        &[100.0, 1000.0, 10_000.0],
        &[1.0],
        1.2,
        6000,
        32,
        21,
    )
    .unwrap();
    for j in 0..32 {
        let mut prev = 0.0;
        for i in 0..3 {
            let e = exp.exit_times[i][j];
            assert!(e.is_finite(), "level {i} path {j} never exits");
            assert!(e >= prev, "exits not nested on path {j}");
            prev = e;
        }
    }
}
