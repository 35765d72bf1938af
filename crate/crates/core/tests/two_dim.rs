//! Two-dimensional pipeline exercises: chain building, both simulation
//! routes, the first-variation flow, and the gradient estimator all run in
//! the plane, not just on the line.

use std::sync::Arc;

use zvonkin_core::*;

fn plane_grid(n_time: usize, n_space: usize) -> UniformGrid {
    UniformGrid::new(2, 0.0, 0.5, n_time, 6.0, n_space).unwrap()
}

fn plane_coeffs(g: &UniformGrid) -> CoefficientSet {
    let drift: VectorFn = Arc::new(|_t, x: &[f64], out: &mut [f64]| {
        out[0] = 0.3 * (x[0] + x[1]).cos();
        out[1] = 0.3 * (x[0] - x[1]).sin();
    });
    let sig: MatrixFn = Arc::new(|_t, x: &[f64], out: &mut [f64]| {
        let s = 1.0 + 0.1 * x[0].sin() * x[1].cos();
        out[0] = s;
        out[1] = 0.0;
        out[2] = 0.0;
        out[3] = s;
    });
    CoefficientSet::new(
        2,
        DriftSpec::Analytic(drift),
        SigmaSpec::Analytic(sig),
        0.81 * 0.99,
        1.21 * 1.01,
        g,
    )
    .unwrap()
}

#[test]
fn chain_builds_and_maps_invert_in_the_plane() {
    let g = plane_grid(50, 41);
    let coeffs = plane_coeffs(&g);
    let chain = partition(&coeffs, &g, 6.0, 8.0, Scheme::ImplicitEuler).unwrap();
    assert_eq!(chain.segments.len(), 1, "mild drift should fit one window");
    let seg = &chain.segments[0];
    assert!(seg.sup_grad <= 0.5);
    // round trips across the region of interest
    let mut x = [0.0; 2];
    let mut y = [0.0; 2];
    for i in 0..10 {
        for j in 0..10 {
            let target = [-4.0 + 0.9 * i as f64, -4.0 + 0.9 * j as f64];
            inverse_map(seg, 0.21, &target, &mut x).unwrap();
            forward_map(seg, 0.21, &x, &mut y);
            let err = ((y[0] - target[0]).powi(2) + (y[1] - target[1]).powi(2)).sqrt();
            assert!(err <= 1e-9, "round trip error {err} at {target:?}");
        }
    }
    // transformed diffusion stays uniformly nondegenerate on samples
    let (lo, hi) = seg.sigma_singular_range;
    assert!(lo >= 0.5 * (0.81f64 * 0.99).sqrt() - 1e-9, "lo = {lo}");
    assert!(hi <= 1.5 * (1.21f64 * 1.01).sqrt() + 1e-9, "hi = {hi}");
}

#[test]
fn transformed_route_matches_direct_in_law() {
    let g = plane_grid(250, 61);
    let coeffs = plane_coeffs(&g);
    let chain = partition(&coeffs, &g, 6.0, 8.0, Scheme::ImplicitEuler).unwrap();
    let src = BrownianSource::from_grid(909, &g);
    let m = 2000;
    let opts = SimOptions {
        record: RecordSteps::At(vec![0, 250]),
        retain_increments: false,
        ..Default::default()
    };
    let direct = euler_direct(&coeffs, &[0.2, -0.1], &g, &src, m, &opts).unwrap();
    let transformed = zvonkin_simulate(&chain, &coeffs, &[0.2, -0.1], &src, m, &opts).unwrap();
    assert_eq!(direct.n_flagged(), 0);
    assert_eq!(transformed.n_flagged(), 0);
    for c in 0..2 {
        let a = lab::terminal_values(&direct, c);
        let b = lab::terminal_values(&transformed, c);
        let ma = a.iter().sum::<f64>() / a.len() as f64;
        let mb = b.iter().sum::<f64>() / b.len() as f64;
        // common noise keeps the two discretizations pathwise close
        assert!((ma - mb).abs() < 0.02, "component {c}: {ma} vs {mb}");
        let ks = lab::ks_distance(&a, &b);
        assert!(ks < 0.05, "component {c}: ks = {ks}");
    }
}

#[test]
fn variational_flow_plane_matches_finite_difference() {
    let g = plane_grid(200, 41);
    let sigma = SpaceTimeField::from_fn(&g, FieldRank::Matrix, |_, x, c| match c {
        0 => 1.0 + 0.1 * (0.3 * x[1]).sin(),
        3 => 1.0 + 0.1 * (0.3 * x[0]).cos(),
        _ => 0.0,
    });
    let src = BrownianSource::from_grid(31, &g);
    let m = 200;
    let h = [1.0, 0.5];
    let lambda = 1e-4;
    let base = euler_driftless(&sigma, &[0.1, 0.2], &src, m, &SimOptions::default()).unwrap();
    let up = euler_driftless(
        &sigma,
        &[0.1 + lambda * h[0], 0.2 + lambda * h[1]],
        &src,
        m,
        &SimOptions::default(),
    )
    .unwrap();
    let dn = euler_driftless(
        &sigma,
        &[0.1 - lambda * h[0], 0.2 - lambda * h[1]],
        &src,
        m,
        &SimOptions::default(),
    )
    .unwrap();
    let flow = variational_flow(&sigma, &base, &h).unwrap();
    let mut worst = 0.0f64;
    for j in 0..m {
        for c in 0..2 {
            let fd = (up.terminal(j, c) - dn.terminal(j, c)) / (2.0 * lambda);
            let dv = flow.terminal(j, c);
            worst = worst.max((dv - fd).abs());
        }
    }
    assert!(worst < 0.05, "worst deviation {worst}");
}

#[test]
fn gradient_estimator_overlaps_finite_difference_in_the_plane() {
    let g = UniformGrid::new(2, 0.0, 0.5, 125, 10.0, 81).unwrap();
    let sigma = SpaceTimeField::from_fn(&g, FieldRank::Matrix, |_, x, c| match c {
        0 => 1.0 + 0.1 * (0.2 * x[1]).cos(),
        3 => 1.0,
        _ => 0.0,
    });
    let cfg = lab::BelConfig {
        m: 20_000,
        seed: 5150,
        n_steps: 125,
        fd_lambda: 1e-4,
        std_ladder: vec![125],
        std_slope_lo: -0.7,
        std_slope_hi: -0.3,
        check_std_slope: false,
    };
    let phi = lab::PhiSpec::new("plane-tanh", 1.0, |x| (x[0] + 0.5 * x[1]).tanh());
    let report = lab::bel_gradient(&sigma, &[0.2, -0.3], &[1.0, 0.0], &phi, &cfg).unwrap();
    assert_eq!(report.verdict, Verdict::Pass, "{:?}", report.statistics);
}

#[test]
fn two_dimensional_krylov_ratio_is_finite_and_scale_invariant() {
    let g = UniformGrid::new(2, 0.0, 1.0, 250, 8.0, 61).unwrap();
    let coeffs = CoefficientSet::constant(2, 0.0, 1.0, &g).unwrap();
    let src = BrownianSource::from_grid(4242, &g);
    let opts = SimOptions {
        retain_increments: false,
        ..Default::default()
    };
    let ens = euler_direct(&coeffs, &[0.0, 0.0], &g, &src, 500, &opts).unwrap();
    let ens2 = euler_direct(&coeffs, &[0.0, 0.0], &g, &src, 1000, &opts).unwrap();
    let bump = SpaceTimeField::from_fn(&g, FieldRank::Scalar, |_t, x, _| {
        let r = (x[0] * x[0] + x[1] * x[1]) / 4.0;
        if r < 1.0 {
            (1.0 - 1.0 / (1.0 - r)).exp()
        } else {
            0.0
        }
    });
    // d/p + 2/q = 2/6 + 2/6 < 1: the stronger exponent regime in the plane
    let params = MixedNormParams::new(6.0, 6.0, 0.0, 1.0).unwrap();
    let report = lab::krylov_check(&ens, &ens2, &[bump], &params, 1.0).unwrap();
    assert_eq!(report.verdict, Verdict::Pass, "{:?}", report.statistics);
}
