//! Path simulation: explicit Euler stepping for the direct and transformed
//! dynamics, first-variation flows, and localization experiments.
//!
//! Every simulator is a pure function of its inputs and the seed. Paths are
//! stepped in parallel, each from its own noise stream, and per-path results
//! are assembled in path order, so thread scheduling never changes output.

mod brownian;
mod localize;

pub use brownian::{generate_brownian, verify_increment_moments, BrownianSource};
pub use localize::{cutoff_coefficients, glue_and_detect_explosion, ExplosionExperiment};

use ndarray::Array3;
use rayon::prelude::*;
use std::io::Write;

use crate::coeffs::CoefficientSet;
use crate::error::{CoreError, Result};
use crate::field::{FieldRank, SpaceTimeField};
use crate::grid::UniformGrid;
use crate::zvonkin::{forward_map_at, inverse_map_at, ZvonkinChain};

/// How Brownian increments are held by an ensemble: materialized, or as a
/// descriptor that regenerates any path's stream on demand. Both give the
/// same numbers; the descriptor avoids gigabyte arrays for wide ensembles.
#[derive(Debug, Clone)]
pub enum IncrementStore {
    Dense(Array3<f64>),
    Replay(BrownianSource),
}

impl IncrementStore {
    pub fn fill_path(&self, path: usize, out: &mut [f64]) {
        match self {
            IncrementStore::Dense(arr) => {
                let (_, n, d) = arr.dim();
                for k in 0..n {
                    for c in 0..d {
                        out[k * d + c] = arr[[path, k, c]];
                    }
                }
            }
            IncrementStore::Replay(src) => src.fill_path(path, out),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathStatus {
    Ok,
    /// Left the confinement box; state frozen from `step` on.
    FrozenAtBox { step: usize },
    /// Produced a non-finite value; state frozen from `step` on.
    NonFinite { step: usize },
}

impl PathStatus {
    pub fn is_ok(self) -> bool {
        matches!(self, PathStatus::Ok)
    }
}

/// Which step indices (0 = initial state) to record.
#[derive(Debug, Clone)]
pub enum RecordSteps {
    All,
    At(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct SimOptions {
    pub record: RecordSteps,
    /// Freeze paths that leave this box. Field-backed simulations always
    /// confine to the field's box regardless of this setting.
    pub confine: Option<UniformGrid>,
    /// Keep a dense copy of the increments (otherwise replay-on-demand).
    pub retain_increments: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            record: RecordSteps::All,
            confine: None,
            retain_increments: true,
        }
    }
}

/// Simulated trajectories at the recorded times, with noise provenance.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub dim: usize,
    pub t0: f64,
    pub dt: f64,
    /// Recorded step indices (ascending, always starting at 0).
    pub record_steps: Vec<usize>,
    /// Times matching `record_steps`.
    pub times: Vec<f64>,
    /// `(path, recorded index, component)`.
    pub states: Array3<f64>,
    pub increments: IncrementStore,
    pub status: Vec<PathStatus>,
    pub rng_seed: u64,
    pub scheme_tag: String,
}

impl PathEnsemble {
    pub fn m_paths(&self) -> usize {
        self.status.len()
    }

    pub fn n_recorded(&self) -> usize {
        self.record_steps.len()
    }

    pub fn value(&self, path: usize, rec: usize, c: usize) -> f64 {
        self.states[[path, rec, c]]
    }

    pub fn terminal(&self, path: usize, c: usize) -> f64 {
        self.states[[path, self.record_steps.len() - 1, c]]
    }

    /// Paths that ran clean the whole horizon.
    pub fn ok_paths(&self) -> Vec<usize> {
        (0..self.m_paths())
            .filter(|&j| self.status[j].is_ok())
            .collect()
    }

    pub fn n_flagged(&self) -> usize {
        self.status.iter().filter(|s| !s.is_ok()).count()
    }

    /// Position of a step index inside `record_steps`, if recorded.
    pub fn rec_index(&self, step: usize) -> Option<usize> {
        self.record_steps.binary_search(&step).ok()
    }

    /// CSV export: `path,time,c0[,c1]`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "path,time")?;
        for c in 0..self.dim {
            write!(w, ",c{c}")?;
        }
        writeln!(w)?;
        for j in 0..self.m_paths() {
            for (r, &t) in self.times.iter().enumerate() {
                write!(w, "{j},{t}")?;
                for c in 0..self.dim {
                    write!(w, ",{}", self.value(j, r, c))?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

fn resolve_record(record: &RecordSteps, n_steps: usize) -> Result<Vec<usize>> {
    let steps = match record {
        RecordSteps::All => (0..=n_steps).collect::<Vec<_>>(),
        RecordSteps::At(list) => {
            let mut v = list.clone();
            if !v.contains(&0) {
                v.push(0);
            }
            v.sort_unstable();
            v.dedup();
            if v.iter().any(|&s| s > n_steps) {
                return Err(CoreError::InvalidParams(format!(
                    "recorded step beyond horizon of {n_steps} steps"
                )));
            }
            v
        }
    };
    Ok(steps)
}

/// Generic per-path driver. The stepper factory builds one stateful stepper
/// per path; the driver owns recording, confinement freezing, and non-finite
/// flagging. Stepper contract: `step(k, t_k, x_k, dw_k, next)` fills the next
/// state.
fn drive<S, F>(
    m: usize,
    dim: usize,
    x0: &[f64],
    source: &BrownianSource,
    t0: f64,
    record: Vec<usize>,
    confine: Option<&UniformGrid>,
    retain: bool,
    make_stepper: F,
    scheme_tag: &str,
) -> PathEnsemble
where
    F: Fn(usize) -> S + Sync,
    S: FnMut(usize, f64, &[f64], &[f64], &mut [f64]),
{
    let n_steps = source.n_steps;
    let dt = source.dt;
    let n_rec = record.len();

    let per_path: Vec<(Vec<f64>, PathStatus)> = (0..m)
        .into_par_iter()
        .map(|j| {
            let mut stepper = make_stepper(j);
            let mut dw = vec![0.0; n_steps * dim];
            source.fill_path(j, &mut dw);
            let mut x = [0.0f64; 2];
            let mut next = [0.0f64; 2];
            x[..dim].copy_from_slice(&x0[..dim]);
            let mut recs = vec![0.0; n_rec * dim];
            let mut rec_pos = 0;
            let mut status = PathStatus::Ok;
            if record[0] == 0 {
                recs[..dim].copy_from_slice(&x[..dim]);
                rec_pos = 1;
            }
            for k in 0..n_steps {
                if status.is_ok() {
                    let t = t0 + k as f64 * dt;
                    stepper(k, t, &x[..dim], &dw[k * dim..(k + 1) * dim], &mut next[..dim]);
                    if next[..dim].iter().any(|v| !v.is_finite()) {
                        status = PathStatus::NonFinite { step: k };
                    } else if confine.map_or(false, |g| !g.in_box(&next[..dim])) {
                        status = PathStatus::FrozenAtBox { step: k };
                    } else {
                        x[..dim].copy_from_slice(&next[..dim]);
                    }
                }
                if rec_pos < n_rec && record[rec_pos] == k + 1 {
                    recs[rec_pos * dim..(rec_pos + 1) * dim].copy_from_slice(&x[..dim]);
                    rec_pos += 1;
                }
            }
            (recs, status)
        })
        .collect();

    let mut states = Array3::zeros((m, n_rec, dim));
    let mut status = Vec::with_capacity(m);
    for (j, (recs, st)) in per_path.into_iter().enumerate() {
        for r in 0..n_rec {
            for c in 0..dim {
                states[[j, r, c]] = recs[r * dim + c];
            }
        }
        status.push(st);
    }
    let times = record.iter().map(|&k| t0 + k as f64 * dt).collect();
    let increments = if retain {
        IncrementStore::Dense(source.dense(m))
    } else {
        IncrementStore::Replay(source.clone())
    };
    PathEnsemble {
        dim,
        t0,
        dt,
        record_steps: record,
        times,
        states,
        increments,
        status,
        rng_seed: source.seed,
        scheme_tag: scheme_tag.to_string(),
    }
}

/// Explicit Euler for `dX = b dt + sigma dW` from `x0`. Sampled coefficients
/// confine paths to the grid box (frozen and flagged on exit).
pub fn euler_direct(
    coeffs: &CoefficientSet,
    x0: &[f64],
    grid: &UniformGrid,
    source: &BrownianSource,
    m: usize,
    opts: &SimOptions,
) -> Result<PathEnsemble> {
    if source.n_steps != grid.n_time || source.dim != grid.dim {
        return Err(CoreError::InvalidParams(
            "noise source does not match the simulation grid".into(),
        ));
    }
    let d = grid.dim;
    let dt = source.dt;
    let record = resolve_record(&opts.record, grid.n_time)?;
    let confine_grid = if coeffs.is_fully_analytic() {
        opts.confine.clone()
    } else {
        Some(opts.confine.clone().unwrap_or_else(|| grid.clone()))
    };
    let ens = drive(
        m,
        d,
        x0,
        source,
        grid.t_start,
        record,
        confine_grid.as_ref(),
        opts.retain_increments,
        |_path| {
            let coeffs = coeffs.clone();
            let mut b = [0.0f64; 2];
            let mut sig = [0.0f64; 4];
            move |_k: usize, t: f64, x: &[f64], dw: &[f64], next: &mut [f64]| {
                coeffs.drift_at(t, x, &mut b[..d]);
                coeffs.sigma_at(t, x, &mut sig[..d * d]);
                for i in 0..d {
                    let mut acc = x[i] + b[i] * dt;
                    for c in 0..d {
                        acc += sig[i * d + c] * dw[c];
                    }
                    next[i] = acc;
                }
            }
        },
        "euler-direct",
    );
    Ok(ens)
}

/// Explicit Euler for the driftless dynamics `dY = Sigma(t, Y) dW` with a
/// grid-interpolated matrix field. Paths are confined to the field's box.
pub fn euler_driftless(
    sigma_field: &SpaceTimeField,
    y0: &[f64],
    source: &BrownianSource,
    m: usize,
    opts: &SimOptions,
) -> Result<PathEnsemble> {
    let grid = sigma_field.grid().clone();
    if sigma_field.rank() != FieldRank::Matrix {
        return Err(CoreError::InvalidField(
            "driftless stepping needs a matrix diffusion field".into(),
        ));
    }
    if source.n_steps != grid.n_time || source.dim != grid.dim {
        return Err(CoreError::InvalidParams(
            "noise source does not match the diffusion field grid".into(),
        ));
    }
    let d = grid.dim;
    let record = resolve_record(&opts.record, grid.n_time)?;
    let ens = drive(
        m,
        d,
        y0,
        source,
        grid.t_start,
        record,
        Some(&grid),
        opts.retain_increments,
        |_path| {
            let field = sigma_field.clone();
            move |k: usize, _t: f64, y: &[f64], dw: &[f64], next: &mut [f64]| {
                for i in 0..d {
                    let mut acc = y[i];
                    for c in 0..d {
                        acc += field.eval_slice(k, y, i * d + c) * dw[c];
                    }
                    next[i] = acc;
                }
            }
        },
        "euler-driftless",
    );
    Ok(ens)
}

/// Simulate through the drift-removing chain: per segment, push the state
/// through the forward map, run the driftless dynamics in transformed
/// coordinates, and pull recorded states back through the inverse map. At a
/// segment's end the terminal condition makes the pull-back the identity, so
/// the state re-anchors in original coordinates before the next segment.
pub fn zvonkin_simulate(
    chain: &ZvonkinChain,
    coeffs: &CoefficientSet,
    x0: &[f64],
    source: &BrownianSource,
    m: usize,
    opts: &SimOptions,
) -> Result<PathEnsemble> {
    if chain.segments.is_empty() {
        return Err(CoreError::InvalidParams("empty chain".into()));
    }
    let base = &chain.segments[0].window_grid;
    let d = base.dim;
    if coeffs.dim != d || source.dim != d {
        return Err(CoreError::InvalidParams(
            "dimension mismatch between chain, coefficients, and noise".into(),
        ));
    }
    let t0 = base.t_start;
    let dt = base.dt();
    let horizon_steps: usize = chain.segments.iter().map(|s| s.window_grid.n_time).sum();
    if source.n_steps != horizon_steps || (source.dt - dt).abs() > 1e-12 * dt {
        return Err(CoreError::InvalidParams(
            "noise source does not match the chain's time grid".into(),
        ));
    }
    let record = resolve_record(&opts.record, horizon_steps)?;
    let n_rec = record.len();

    // Absolute step index at which each segment starts.
    let mut seg_starts = Vec::with_capacity(chain.segments.len());
    let mut acc = 0usize;
    for seg in &chain.segments {
        seg_starts.push(acc);
        acc += seg.window_grid.n_time;
    }

    let per_path: Vec<(Vec<f64>, PathStatus)> = (0..m)
        .into_par_iter()
        .map(|j| {
            let mut dw = vec![0.0; horizon_steps * d];
            source.fill_path(j, &mut dw);
            let mut x = [0.0f64; 2];
            let mut y = [0.0f64; 2];
            let mut next = [0.0f64; 2];
            let mut xr = [0.0f64; 2];
            x[..d].copy_from_slice(&x0[..d]);
            let mut recs = vec![0.0; n_rec * d];
            let mut rec_pos = 0;
            let mut status = PathStatus::Ok;
            if record[0] == 0 {
                recs[..d].copy_from_slice(&x[..d]);
                rec_pos = 1;
            }
            'segments: for (si, seg) in chain.segments.iter().enumerate() {
                let k_base = seg_starts[si];
                let wg = &seg.window_grid;
                forward_map_at(seg, 0, &x[..d], &mut y[..d]);
                for local in 0..wg.n_time {
                    let k = k_base + local;
                    if status.is_ok() {
                        for i in 0..d {
                            let mut a = y[i];
                            for c in 0..d {
                                a += seg.sigma_transformed.eval_slice(local, &y[..d], i * d + c)
                                    * dw[k * d + c];
                            }
                            next[i] = a;
                        }
                        if next[..d].iter().any(|v| !v.is_finite()) {
                            status = PathStatus::NonFinite { step: k };
                        } else if !wg.in_box(&next[..d]) {
                            status = PathStatus::FrozenAtBox { step: k };
                        } else {
                            y[..d].copy_from_slice(&next[..d]);
                        }
                    }
                    if rec_pos < n_rec && record[rec_pos] == k + 1 {
                        if local + 1 == wg.n_time {
                            // terminal slice: the map is the identity
                            recs[rec_pos * d..(rec_pos + 1) * d].copy_from_slice(&y[..d]);
                        } else {
                            match inverse_map_at(seg, local + 1, &y[..d], &mut xr[..d]) {
                                Ok(()) => recs[rec_pos * d..(rec_pos + 1) * d]
                                    .copy_from_slice(&xr[..d]),
                                Err(_) => {
                                    status = PathStatus::NonFinite { step: k };
                                    recs[rec_pos * d..(rec_pos + 1) * d]
                                        .copy_from_slice(&x[..d]);
                                }
                            }
                        }
                        rec_pos += 1;
                    }
                    if !status.is_ok() {
                        // freeze the original-coordinate state and pad records
                        if inverse_map_at(seg, (local + 1).min(wg.n_time), &y[..d], &mut xr[..d])
                            .is_ok()
                        {
                            x[..d].copy_from_slice(&xr[..d]);
                        }
                        while rec_pos < n_rec {
                            recs[rec_pos * d..(rec_pos + 1) * d].copy_from_slice(&x[..d]);
                            rec_pos += 1;
                        }
                        break 'segments;
                    }
                }
                x[..d].copy_from_slice(&y[..d]);
            }
            (recs, status)
        })
        .collect();

    let mut states = Array3::zeros((m, n_rec, d));
    let mut status = Vec::with_capacity(m);
    for (j, (recs, st)) in per_path.into_iter().enumerate() {
        for r in 0..n_rec {
            for c in 0..d {
                states[[j, r, c]] = recs[r * d + c];
            }
        }
        status.push(st);
    }
    let times = record.iter().map(|&k| t0 + k as f64 * dt).collect();
    let increments = if opts.retain_increments {
        IncrementStore::Dense(source.dense(m))
    } else {
        IncrementStore::Replay(source.clone())
    };
    Ok(PathEnsemble {
        dim: d,
        t0,
        dt,
        record_steps: record,
        times,
        states,
        increments,
        status,
        rng_seed: source.seed,
        scheme_tag: "zvonkin".to_string(),
    })
}

/// First-variation flow along a base ensemble: explicit Euler for
/// `dD = (grad sigma . D) dW` with shared increments. The base must be
/// recorded at every step.
pub fn variational_flow(
    sigma_field: &SpaceTimeField,
    base: &PathEnsemble,
    h: &[f64],
) -> Result<PathEnsemble> {
    let grid = sigma_field.grid().clone();
    let d = grid.dim;
    if base.dim != d {
        return Err(CoreError::InvalidParams("dimension mismatch".into()));
    }
    let n_steps = grid.n_time;
    if base.record_steps.len() != n_steps + 1 {
        return Err(CoreError::InvalidParams(
            "variational flow needs the base ensemble recorded at every step".into(),
        ));
    }
    // Per-axis gradients of sigma as matrix fields.
    let mut grad_sigma = Vec::with_capacity(d);
    for axis in 0..d {
        let mut gfield = SpaceTimeField::zeros(&grid, FieldRank::Matrix);
        for k in 0..grid.n_slices() {
            for p in 0..grid.n_points() {
                for c in 0..d * d {
                    let v = sigma_field.derivative_at(k, p, c, axis);
                    gfield.set(k, p, c, v);
                }
            }
        }
        grad_sigma.push(gfield);
    }

    let m = base.m_paths();
    let mut states = Array3::zeros((m, n_steps + 1, d));
    let rows: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|j| {
            let mut dw = vec![0.0; n_steps * d];
            base.increments.fill_path(j, &mut dw);
            let mut der = vec![0.0; (n_steps + 1) * d];
            der[..d].copy_from_slice(&h[..d]);
            let frozen_at = match base.status[j] {
                PathStatus::Ok => usize::MAX,
                PathStatus::FrozenAtBox { step } | PathStatus::NonFinite { step } => step,
            };
            let mut x = [0.0f64; 2];
            for k in 0..n_steps {
                let (prev, rest) = der.split_at_mut((k + 1) * d);
                let dcur = &prev[k * d..];
                let dnext = &mut rest[..d];
                if k >= frozen_at {
                    dnext.copy_from_slice(dcur);
                    continue;
                }
                for c in 0..d {
                    x[c] = base.value(j, k, c);
                }
                for i in 0..d {
                    let mut acc = dcur[i];
                    for w in 0..d {
                        let mut coef = 0.0;
                        for l in 0..d {
                            coef += grad_sigma[l].eval_slice(k, &x[..d], i * d + w) * dcur[l];
                        }
                        acc += coef * dw[k * d + w];
                    }
                    dnext[i] = acc;
                }
            }
            der
        })
        .collect();
    for (j, der) in rows.into_iter().enumerate() {
        for r in 0..=n_steps {
            for c in 0..d {
                states[[j, r, c]] = der[r * d + c];
            }
        }
    }
    Ok(PathEnsemble {
        dim: d,
        t0: base.t0,
        dt: base.dt,
        record_steps: base.record_steps.clone(),
        times: base.times.clone(),
        states,
        increments: base.increments.clone(),
        status: base.status.clone(),
        rng_seed: base.rng_seed,
        scheme_tag: "variational".to_string(),
    })
}
