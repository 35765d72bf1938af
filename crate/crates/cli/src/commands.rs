//! Command implementations. Each returns the process exit code: 0 pass,
//! 1 usage/config error (handled upstream), 2 numerical failure,
//! 3 structural refusal, 4 verdict fail, 5 inconclusive.

use std::path::Path;
use std::sync::Arc;

use anyhow::Result;
use serde::Serialize;

use zvonkin_core::{
    euler_direct, glue_and_detect_explosion, lab, partition, solve_backward, zvonkin_simulate,
    BrownianSource, CoreError, FieldRank, PathEnsemble, PdeProblem, RecordSteps, SimOptions,
    SpaceTimeField, Verdict, ZvonkinChain,
};

use crate::config::Experiment;
use crate::output::{write_error, OutputDir};

pub const EXIT_PASS: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_NUMERICAL: u8 = 2;
pub const EXIT_STRUCTURAL: u8 = 3;
pub const EXIT_VERDICT_FAIL: u8 = 4;
pub const EXIT_INCONCLUSIVE: u8 = 5;

fn exit_for_core_error(e: &CoreError) -> u8 {
    match e {
        CoreError::MinimumWindowReached { .. } => EXIT_STRUCTURAL,
        _ => EXIT_NUMERICAL,
    }
}

fn verdict_exit(v: Verdict) -> u8 {
    match v {
        Verdict::Pass => EXIT_PASS,
        Verdict::Fail => EXIT_VERDICT_FAIL,
        Verdict::Inconclusive => EXIT_INCONCLUSIVE,
    }
}

#[derive(Serialize)]
struct PdeOutput<'a> {
    config_digest: &'a str,
    scheme: &'a str,
    residual_norm: f64,
    norm_report: &'a zvonkin_core::pde::NormReport,
}

pub fn cmd_solve_pde(exp: &Experiment, out_root: &Path) -> Result<u8> {
    let mut out = OutputDir::create(out_root, "solve-pde", &exp.digest(), exp.config.ensemble.seed)?;
    let grid = exp.grid.clone();
    let rank = if exp.source_exprs.len() == 1 {
        FieldRank::Scalar
    } else {
        FieldRank::Vector
    };
    let exprs = exp.source_exprs.clone();
    let source = SpaceTimeField::from_fn(&grid, rank, |t, x, c| exprs[c].eval(t, x));
    let problem = match PdeProblem::new(
        exp.coeffs.clone(),
        source,
        exp.config.exponents.p,
        exp.config.exponents.q,
    ) {
        Ok(p) => p,
        Err(e) => {
            write_error(out_root, "numerical", &e.to_string());
            eprintln!("error: {e}");
            return Ok(EXIT_NUMERICAL);
        }
    };
    let solution = match solve_backward(&problem, exp.scheme) {
        Ok(s) => s,
        Err(e) => {
            write_error(out_root, "numerical", &e.to_string());
            eprintln!("error: {e}");
            return Ok(exit_for_core_error(&e));
        }
    };
    solution.u.save(&out.register("solution.bin", "field"))?;
    let csv_path = out.register("solution.csv", "csv");
    let f = std::fs::File::create(&csv_path)?;
    solution.u.write_csv(std::io::BufWriter::new(f))?;
    out.write_json(
        "norms.json",
        "report",
        &PdeOutput {
            config_digest: &exp.digest(),
            scheme: &exp.config.pde.scheme,
            residual_norm: solution.residual_norm,
            norm_report: &solution.norm_report,
        },
    )?;
    out.finalize()?;
    println!(
        "solve-pde: sup|u| = {:.6e}, residual = {:.3e}",
        solution.norm_report.sup_u, solution.residual_norm
    );
    Ok(EXIT_PASS)
}

pub fn cmd_build_chain(exp: &Experiment, out_root: &Path) -> Result<u8> {
    let mut out =
        OutputDir::create(out_root, "build-chain", &exp.digest(), exp.config.ensemble.seed)?;
    let chain = match partition(
        &exp.coeffs,
        &exp.grid,
        exp.config.exponents.p,
        exp.config.exponents.q,
        exp.scheme,
    ) {
        Ok(c) => c,
        Err(e) => {
            write_error(
                out_root,
                if matches!(e, CoreError::MinimumWindowReached { .. }) {
                    "structural"
                } else {
                    "numerical"
                },
                &e.to_string(),
            );
            eprintln!("error: {e}");
            return Ok(exit_for_core_error(&e));
        }
    };
    println!("segment  window                sup|grad u|");
    for (i, seg) in chain.segments.iter().enumerate() {
        println!(
            "{i:>7}  [{:>8.4}, {:>8.4}]  {:.6}",
            seg.window_grid.t_start, seg.window_grid.t_end, seg.sup_grad
        );
        seg.u
            .save(&out.register(&format!("segment_{i:02}_u.bin", i = i), "field"))?;
        seg.sigma_transformed
            .save(&out.register(&format!("segment_{i:02}_sigma.bin", i = i), "field"))?;
    }
    #[derive(Serialize)]
    struct ChainOutput<'a> {
        config_digest: &'a str,
        #[serde(flatten)]
        manifest: zvonkin_core::ChainManifest,
    }
    out.write_json(
        "chain.json",
        "manifest",
        &ChainOutput {
            config_digest: &exp.digest(),
            manifest: chain.manifest(),
        },
    )?;
    out.finalize()?;
    Ok(EXIT_PASS)
}

#[derive(Serialize)]
struct EnsembleSummary {
    scheme: String,
    m_paths: usize,
    flagged: usize,
    terminal_mean: Vec<f64>,
    terminal_variance: Vec<f64>,
}

fn summarize(ens: &PathEnsemble) -> EnsembleSummary {
    let ok = ens.ok_paths();
    let d = ens.dim;
    let mut mean = vec![0.0; d];
    let mut var = vec![0.0; d];
    for c in 0..d {
        let vals: Vec<f64> = ok.iter().map(|&j| ens.terminal(j, c)).collect();
        let n = vals.len().max(1) as f64;
        let m = vals.iter().sum::<f64>() / n;
        mean[c] = m;
        var[c] = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    }
    EnsembleSummary {
        scheme: ens.scheme_tag.clone(),
        m_paths: ens.m_paths(),
        flagged: ens.n_flagged(),
        terminal_mean: mean,
        terminal_variance: var,
    }
}

#[derive(Serialize)]
struct SimulateSummary {
    config_digest: String,
    mode: String,
    direct: Option<EnsembleSummary>,
    transformed: Option<EnsembleSummary>,
    chain_segments: Option<usize>,
    terminal_ks_distance: Option<f64>,
}

fn record_policy(exp: &Experiment) -> RecordSteps {
    match exp.config.simulate.record.as_str() {
        "all" => RecordSteps::All,
        _ => {
            let n = exp.grid.n_time;
            let mut steps: Vec<usize> = (0..=16).map(|i| i * n / 16).collect();
            steps.dedup();
            RecordSteps::At(steps)
        }
    }
}

fn export_ensemble(out: &mut OutputDir, name: &str, ens: &PathEnsemble, cap: usize) -> Result<()> {
    let path = out.register(name, "csv");
    let f = std::fs::File::create(&path)?;
    let mut w = std::io::BufWriter::new(f);
    use std::io::Write;
    write!(w, "path,time")?;
    for c in 0..ens.dim {
        write!(w, ",c{c}")?;
    }
    writeln!(w)?;
    for j in 0..ens.m_paths().min(cap) {
        for (r, &t) in ens.times.iter().enumerate() {
            write!(w, "{j},{t}")?;
            for c in 0..ens.dim {
                write!(w, ",{}", ens.value(j, r, c))?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct ExplosionSummary {
    config_digest: String,
    levels: Vec<f64>,
    m_paths: usize,
    flagged_exploded: usize,
    median_zeta: f64,
    agreement_sup: f64,
}

fn cmd_simulate_explosion(
    exp: &Experiment,
    out_root: &Path,
    cfg: &crate::config::ExplosionConfig,
) -> Result<u8> {
    let mut out =
        OutputDir::create(out_root, "simulate", &exp.digest(), exp.config.ensemble.seed)?;
    let experiment = match glue_and_detect_explosion(
        &exp.coeffs,
        &cfg.levels,
        &exp.config.ensemble.x0,
        cfg.horizon,
        cfg.n_steps,
        exp.config.ensemble.m_paths,
        exp.config.ensemble.seed,
    ) {
        Ok(e) => e,
        Err(e) => {
            write_error(out_root, "numerical", &e.to_string());
            eprintln!("error: {e}");
            return Ok(exit_for_core_error(&e));
        }
    };
    // blow-up time histogram data
    let hist_path = out.register("zeta.csv", "csv");
    {
        use std::io::Write;
        let f = std::fs::File::create(&hist_path)?;
        let mut w = std::io::BufWriter::new(f);
        writeln!(w, "path,zeta,exploded")?;
        for (j, (&z, &e)) in experiment
            .zeta
            .iter()
            .zip(&experiment.exploded)
            .enumerate()
        {
            writeln!(w, "{j},{z},{}", e as u8)?;
        }
    }
    out.write_gnuplot_stub("zeta.plt", "zeta.csv", "blow-up time estimates", false)?;
    export_ensemble(&mut out, "paths.csv", &experiment.ensemble, 50)?;
    let mut zs: Vec<f64> = experiment
        .zeta
        .iter()
        .copied()
        .filter(|z| z.is_finite())
        .collect();
    zs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if zs.is_empty() {
        f64::INFINITY
    } else {
        zs[zs.len() / 2]
    };
    let flagged = experiment.exploded.iter().filter(|&&e| e).count();
    out.write_json(
        "summary.json",
        "report",
        &ExplosionSummary {
            config_digest: exp.digest(),
            levels: experiment.levels.clone(),
            m_paths: experiment.exploded.len(),
            flagged_exploded: flagged,
            median_zeta: median,
            agreement_sup: experiment.agreement_sup,
        },
    )?;
    out.finalize()?;
    println!(
        "simulate (explosion): {flagged}/{} flagged, median zeta = {median:.4}, agreement sup = {:.2e}",
        experiment.exploded.len(),
        experiment.agreement_sup
    );
    Ok(EXIT_PASS)
}

pub fn cmd_simulate(exp: &Experiment, out_root: &Path, mode: &str) -> Result<u8> {
    if let Some(cfg) = &exp.config.explosion {
        return cmd_simulate_explosion(exp, out_root, cfg);
    }
    let mut out =
        OutputDir::create(out_root, "simulate", &exp.digest(), exp.config.ensemble.seed)?;
    let m = exp.config.ensemble.m_paths;
    let seed = exp.config.ensemble.seed;
    let x0 = exp.config.ensemble.x0.clone();
    let src = BrownianSource::from_grid(seed, &exp.grid);
    let opts = SimOptions {
        record: record_policy(exp),
        retain_increments: false,
        ..Default::default()
    };

    let run_direct = mode == "direct" || mode == "both";
    let run_transformed = mode == "zvonkin" || mode == "both";
    let mut direct = None;
    let mut transformed = None;
    let mut chain_segments = None;

    if run_direct {
        match euler_direct(&exp.coeffs, &x0, &exp.grid, &src, m, &opts) {
            Ok(e) => {
                export_ensemble(&mut out, "paths_direct.csv", &e, exp.config.simulate.export_paths)?;
                direct = Some(e);
            }
            Err(e) => {
                write_error(out_root, "numerical", &e.to_string());
                eprintln!("error: {e}");
                return Ok(exit_for_core_error(&e));
            }
        }
    }
    if run_transformed {
        let chain: ZvonkinChain = match partition(
            &exp.coeffs,
            &exp.grid,
            exp.config.exponents.p,
            exp.config.exponents.q,
            exp.scheme,
        ) {
            Ok(c) => c,
            Err(e) => {
                write_error(
                    out_root,
                    if matches!(e, CoreError::MinimumWindowReached { .. }) {
                        "structural"
                    } else {
                        "numerical"
                    },
                    &e.to_string(),
                );
                eprintln!("error: {e}");
                return Ok(exit_for_core_error(&e));
            }
        };
        chain_segments = Some(chain.segments.len());
        out.write_json("chain.json", "manifest", &chain.manifest())?;
        match zvonkin_simulate(&chain, &exp.coeffs, &x0, &src, m, &opts) {
            Ok(e) => {
                export_ensemble(
                    &mut out,
                    "paths_transformed.csv",
                    &e,
                    exp.config.simulate.export_paths,
                )?;
                transformed = Some(e);
            }
            Err(e) => {
                write_error(out_root, "numerical", &e.to_string());
                eprintln!("error: {e}");
                return Ok(exit_for_core_error(&e));
            }
        }
    }

    let ks = match (&direct, &transformed) {
        (Some(a), Some(b)) => {
            let ta = lab::terminal_values(a, 0);
            let tb = lab::terminal_values(b, 0);
            Some(lab::ks_distance(&ta, &tb))
        }
        _ => None,
    };
    let summary = SimulateSummary {
        config_digest: exp.digest(),
        mode: mode.to_string(),
        direct: direct.as_ref().map(summarize),
        transformed: transformed.as_ref().map(summarize),
        chain_segments,
        terminal_ks_distance: ks,
    };
    out.write_json("summary.json", "report", &summary)?;
    out.finalize()?;
    if let Some(s) = &summary.direct {
        println!(
            "simulate direct: mean = {:?}, var = {:?}, flagged = {}",
            s.terminal_mean, s.terminal_variance, s.flagged
        );
    }
    if let Some(s) = &summary.transformed {
        println!(
            "simulate transformed ({} segments): mean = {:?}, var = {:?}, flagged = {}",
            chain_segments.unwrap_or(0),
            s.terminal_mean,
            s.terminal_variance,
            s.flagged
        );
    }
    if let Some(k) = ks {
        println!("terminal KS distance: {k:.4}");
    }
    Ok(EXIT_PASS)
}

fn feller_ladder(exp: &Experiment) -> Vec<usize> {
    let configured = &exp.config.checks.feller.ladder_steps;
    if !configured.is_empty() {
        return configured.clone();
    }
    let n = exp.grid.n_time;
    vec![n / 16, n / 8, n / 4, n / 2, n]
}

pub fn cmd_verify(exp: &Experiment, out_root: &Path, check: &str) -> Result<u8> {
    let mut out = OutputDir::create(out_root, "verify", &exp.digest(), exp.config.ensemble.seed)?;
    let result = run_check(exp, &mut out, check);
    match result {
        Ok(report) => {
            out.write_json(&format!("{}.json", report.name), "report", &report)?;
            out.finalize()?;
            let verdict = report.verdict;
            println!("verify {check}: {:?}", verdict);
            for (k, v) in &report.statistics {
                println!("  {k} = {:.6}", v.value);
            }
            Ok(verdict_exit(verdict))
        }
        Err(RunError::Core(e)) => {
            write_error(out_root, "numerical", &e.to_string());
            eprintln!("error: {e}");
            Ok(exit_for_core_error(&e))
        }
        Err(RunError::Usage(msg)) => {
            write_error(out_root, "config", &msg);
            eprintln!("error: {msg}");
            Ok(EXIT_USAGE)
        }
        Err(RunError::Io(e)) => Err(e),
    }
}

enum RunError {
    Core(CoreError),
    Usage(String),
    Io(anyhow::Error),
}

impl From<CoreError> for RunError {
    fn from(e: CoreError) -> Self {
        RunError::Core(e)
    }
}

fn build_chain_for(exp: &Experiment) -> Result<Arc<ZvonkinChain>, CoreError> {
    partition(
        &exp.coeffs,
        &exp.grid,
        exp.config.exponents.p,
        exp.config.exponents.q,
        exp.scheme,
    )
    .map(Arc::new)
}

fn run_check(
    exp: &Experiment,
    out: &mut OutputDir,
    check: &str,
) -> std::result::Result<lab::DiagnosticsReport, RunError> {
    let m = exp.config.ensemble.m_paths;
    let seed = exp.config.ensemble.seed;
    let grid = exp.grid.clone();
    match check {
        "feller" => {
            let cfg = &exp.config.checks.feller;
            let ladder = feller_ladder(exp);
            let use_chain = cfg.pipeline == "zvonkin";
            let chain = if use_chain {
                Some(build_chain_for(exp)?)
            } else {
                None
            };
            let coeffs = exp.coeffs.clone();
            let ladder_arc = ladder.clone();
            let run = move |start: &[f64], s: u64| {
                let src = BrownianSource::from_grid(s, &grid);
                let opts = SimOptions {
                    record: RecordSteps::At(ladder_arc.clone()),
                    retain_increments: false,
                    ..Default::default()
                };
                match &chain {
                    Some(c) => zvonkin_simulate(c, &coeffs, start, &src, m, &opts),
                    None => euler_direct(&coeffs, start, &grid, &src, m, &opts),
                }
            };
            let mid = 0.5 * (cfg.x + cfg.y);
            let battery = vec![lab::PhiSpec::indicator(mid)];
            let config = lab::FellerConfig {
                ladder_steps: ladder.clone(),
                fit_phi: 0,
                slope_lo: cfg.slope_lo,
                slope_hi: cfg.slope_hi,
                seed_x: seed,
                seed_y: seed.wrapping_add(1),
            };
            let mut report = lab::strong_feller_scan(&run, &[cfg.x], &[cfg.y], &battery, &config)?;
            // scan CSV + plot stub
            let csv = out.register("feller_scan.csv", "csv");
            report.artifacts.push(csv.display().to_string());
            let mut text = String::from("t,d,ci_low,ci_high\n");
            for (li, &step) in ladder.iter().enumerate() {
                let t = exp.grid.dt() * step as f64;
                let s = &report.statistics[&format!("d_phi0_t{li}")];
                text.push_str(&format!(
                    "{t},{},{},{}\n",
                    s.value,
                    s.ci_low.unwrap_or(f64::NAN),
                    s.ci_high.unwrap_or(f64::NAN)
                ));
            }
            std::fs::write(&csv, text).map_err(|e| RunError::Io(e.into()))?;
            out.write_gnuplot_stub("feller_scan.plt", "feller_scan.csv", "D(t)", true)
                .map_err(RunError::Io)?;
            Ok(report)
        }
        "krylov" => {
            use rand::Rng;
            use rand_chacha::rand_core::SeedableRng;
            let cfg = &exp.config.checks.krylov;
            let src = BrownianSource::from_grid(seed, &grid);
            let opts = SimOptions {
                retain_increments: false,
                ..Default::default()
            };
            let x0 = exp.config.ensemble.x0.clone();
            let ens = euler_direct(&exp.coeffs, &x0, &grid, &src, m, &opts)?;
            let ens2 = euler_direct(&exp.coeffs, &x0, &grid, &src, 2 * m, &opts)?;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xbeef);
            let half = grid.half_width;
            let battery: Vec<SpaceTimeField> = (0..cfg.battery_size)
                .map(|_| {
                    let center: f64 = rng.gen_range(-0.4 * half..0.4 * half);
                    let width: f64 = rng.gen_range(0.1 * half..0.3 * half);
                    let amp: f64 = rng.gen_range(0.5..2.0);
                    SpaceTimeField::from_fn(&grid, FieldRank::Scalar, move |_t, x, _| {
                        let r = ((x[0] - center) / width).powi(2);
                        if r < 1.0 {
                            amp * (1.0 - 1.0 / (1.0 - r)).exp()
                        } else {
                            0.0
                        }
                    })
                })
                .collect();
            let params = zvonkin_core::MixedNormParams::new(
                exp.config.exponents.p,
                exp.config.exponents.q,
                grid.t_start,
                grid.t_end,
            )?;
            Ok(lab::krylov_check(
                &ens,
                &ens2,
                &battery,
                &params,
                exp.config.exponents.threshold,
            )?)
        }
        "noncrossing" => {
            let cfg = exp.config.checks.noncrossing.clone();
            if grid.dim != 1 {
                return Err(RunError::Usage(
                    "order checking needs a one-dimensional grid".into(),
                ));
            }
            let chain = if cfg.pipeline == "zvonkin" {
                Some(build_chain_for(exp)?)
            } else {
                None
            };
            let src = BrownianSource::from_grid(seed, &grid);
            let opts = SimOptions {
                retain_increments: false,
                ..Default::default()
            };
            let mut family = Vec::new();
            for &s in &cfg.starts {
                let ens = match &chain {
                    Some(c) => zvonkin_simulate(c, &exp.coeffs, &[s], &src, m, &opts)?,
                    None => euler_direct(&exp.coeffs, &[s], &grid, &src, m, &opts)?,
                };
                family.push((s, ens));
            }
            let mut report = lab::noncrossing_check(&family, &cfg.pipeline)?;
            if cfg.contrast {
                let mut contrast_family = Vec::new();
                for &s in &cfg.starts {
                    contrast_family
                        .push((s, euler_direct(&exp.coeffs, &[s], &grid, &src, m, &opts)?));
                }
                let contrast = lab::noncrossing_check(&contrast_family, "direct-contrast")?;
                report.note(format!(
                    "direct-stepper contrast (no verdict): violations = {}",
                    contrast.statistics["violations"].value
                ));
            }
            Ok(report)
        }
        "two-point" | "two_point" => {
            let cfg = &exp.config.checks.two_point;
            let coeffs = exp.coeffs.clone();
            let run = move |start: &[f64], s: u64| {
                let src = BrownianSource::from_grid(s, &grid);
                let opts = SimOptions {
                    record: RecordSteps::At(vec![0, exp.grid.n_time]),
                    retain_increments: false,
                    ..Default::default()
                };
                euler_direct(&coeffs, start, &exp.grid, &src, m, &opts)
            };
            Ok(lab::two_point_moments(
                &run,
                seed,
                &exp.config.ensemble.x0,
                &cfg.separations,
                &cfg.gammas,
                "configured-coefficients",
            )?)
        }
        "bel" => {
            let cfg = &exp.config.checks.bel;
            let d = grid.dim;
            let coeffs = exp.coeffs.clone();
            let sigma_field = SpaceTimeField::from_fn(&grid, FieldRank::Matrix, |t, x, c| {
                let mut buf = [0.0f64; 4];
                coeffs.sigma_at(t, x, &mut buf[..d * d]);
                buf[c]
            });
            let std_ladder = if cfg.std_ladder.is_empty() {
                let n = grid.n_time;
                vec![n / 16, n / 8, n / 4, n / 2, n]
            } else {
                cfg.std_ladder.clone()
            };
            let config = lab::BelConfig {
                m,
                seed,
                n_steps: grid.n_time,
                fd_lambda: cfg.fd_lambda,
                std_ladder,
                std_slope_lo: -0.7,
                std_slope_hi: -0.3,
                check_std_slope: false,
            };
            let phi = lab::PhiSpec::new("tanh", 1.0, |x| x[0].tanh());
            let mut h = vec![0.0; d];
            h[0] = 1.0;
            let mut x = vec![0.0; d];
            x[0] = cfg.x;
            Ok(lab::bel_gradient(&sigma_field, &x, &h, &phi, &config)?)
        }
        "khasminskii" => {
            let cfg = &exp.config.checks.khasminskii;
            let src = BrownianSource::from_grid(seed, &grid);
            let opts = SimOptions {
                retain_increments: false,
                ..Default::default()
            };
            let ens = euler_direct(&exp.coeffs, &exp.config.ensemble.x0, &grid, &src, m, &opts)?;
            let window = if cfg.window_steps == 0 {
                (grid.n_time / 8).max(1)
            } else {
                cfg.window_steps
            };
            let beta = |_t: f64, x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
            Ok(lab::khasminskii_moment(&ens, &beta, &cfg.lambdas, window)?)
        }
        "uniqueness" => {
            let cfg = &exp.config.checks.uniqueness;
            let mut ladder = Vec::new();
            for level in 0..cfg.levels {
                let factor = 1usize << level;
                let g = zvonkin_core::UniformGrid::with_center(
                    grid.dim,
                    grid.t_start,
                    grid.t_end,
                    grid.n_time * factor,
                    grid.half_width,
                    grid.center,
                    (grid.n_space - 1) * factor + 1,
                )?;
                // rebuild the coefficients on the refined grid so grid-tied
                // preparation shrinks with it
                let refined = build_experiment_on(exp, &g).map_err(RunError::Usage)?;
                let chain = partition(
                    &refined,
                    &g,
                    exp.config.exponents.p,
                    exp.config.exponents.q,
                    exp.scheme,
                )?;
                let src = BrownianSource::from_grid(seed, &g);
                let opts = SimOptions {
                    record: RecordSteps::At((0..=16).map(|i| i * g.n_time / 16).collect()),
                    retain_increments: false,
                    ..Default::default()
                };
                let a = euler_direct(&refined, &exp.config.ensemble.x0, &g, &src, m, &opts)?;
                let b =
                    zvonkin_simulate(&chain, &refined, &exp.config.ensemble.x0, &src, m, &opts)?;
                ladder.push((format!("level{level}"), a, b));
            }
            Ok(lab::uniqueness_witness(&ladder, cfg.tolerance)?)
        }
        other => Err(RunError::Usage(format!(
            "unknown check '{other}' (feller | krylov | noncrossing | two-point | bel | khasminskii | uniqueness)"
        ))),
    }
}

/// Rebuild the configured coefficients on another grid (used by refinement
/// ladders so that capping and smoothing follow the finer spacing).
fn build_experiment_on(
    exp: &Experiment,
    g: &zvonkin_core::UniformGrid,
) -> std::result::Result<zvonkin_core::CoefficientSet, String> {
    let mut cfg = exp.config.clone();
    cfg.grid.n_time = g.n_time;
    cfg.grid.n_space = g.n_space;
    let raw = toml::to_string(&cfg).map_err(|e| e.to_string())?;
    let rebuilt = Experiment::from_toml(&raw).map_err(|e| e.to_string())?;
    Ok(rebuilt.coeffs)
}
