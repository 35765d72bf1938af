//! Statistical harnesses probing the qualitative theory at desk scale.
//!
//! Every check emits a [`DiagnosticsReport`]: a self-describing JSON document
//! carrying the inputs digest, the measured statistics with confidence
//! intervals, the thresholds the verdict used, and the verdict itself. All
//! randomness flows through explicit seeds, so a report is reproducible
//! bit-for-bit from its inputs.

mod bel;
mod feller;
mod khasminskii;
mod krylov;
mod moments;
mod noncross;
mod uniqueness;

pub use bel::{bel_gradient, BelConfig};
pub use feller::{strong_feller_scan, FellerConfig, PhiSpec};
pub use khasminskii::khasminskii_moment;
pub use krylov::krylov_check;
pub use moments::two_point_moments;
pub use noncross::noncrossing_check;
pub use uniqueness::uniqueness_witness;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::sde::PathEnsemble;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StatValue {
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci_low: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci_high: Option<f64>,
}

impl StatValue {
    pub fn plain(value: f64) -> Self {
        Self {
            value,
            ci_low: None,
            ci_high: None,
        }
    }

    pub fn with_ci(value: f64, half_width: f64) -> Self {
        Self {
            value,
            ci_low: Some(value - half_width),
            ci_high: Some(value + half_width),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub schema_version: u32,
    pub name: String,
    /// Everything the check consumed: seeds, grid descriptors, coefficient
    /// tags, parameters.
    pub inputs: serde_json::Value,
    /// SHA-256 of the canonical inputs serialization.
    pub digest: String,
    pub statistics: BTreeMap<String, StatValue>,
    /// The thresholds the verdict applied, recorded next to the outcome.
    pub thresholds: BTreeMap<String, f64>,
    pub verdict: Verdict,
    pub artifacts: Vec<String>,
    pub notes: Vec<String>,
}

impl DiagnosticsReport {
    pub fn new(name: &str, inputs: serde_json::Value) -> Self {
        let digest = hex_digest(&inputs);
        Self {
            schema_version: 1,
            name: name.to_string(),
            inputs,
            digest,
            statistics: BTreeMap::new(),
            thresholds: BTreeMap::new(),
            verdict: Verdict::Inconclusive,
            artifacts: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn stat(&mut self, key: &str, v: StatValue) -> &mut Self {
        self.statistics.insert(key.to_string(), v);
        self
    }

    pub fn threshold(&mut self, key: &str, v: f64) -> &mut Self {
        self.thresholds.insert(key.to_string(), v);
        self
    }

    pub fn note(&mut self, msg: impl Into<String>) -> &mut Self {
        self.notes.push(msg.into());
        self
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        serde_json::to_writer_pretty(&mut w, self)?;
        writeln!(w)?;
        Ok(())
    }
}

fn hex_digest(inputs: &serde_json::Value) -> String {
    let canonical = serde_json::to_string(inputs).unwrap_or_default();
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

/// A simulation hook: given a start point and a seed, produce an ensemble.
/// Checks decide whether starts share the seed (pathwise statements) or get
/// distinct ones (law statements).
pub type StartRunner<'a> = &'a (dyn Fn(&[f64], u64) -> Result<PathEnsemble> + Sync);

// ---- shared statistics helpers ----

/// Sample mean and its 95% half-width.
pub fn mean_ci(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    if vals.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = vals.iter().sum::<f64>() / n;
    if vals.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
    ys.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let (na, nb) = (xs.len() as f64, ys.len() as f64);
    let mut i = 0;
    let mut j = 0;
    let mut d: f64 = 0.0;
    while i < xs.len() && j < ys.len() {
        if xs[i] < ys[j] {
            i += 1;
        } else if ys[j] < xs[i] {
            j += 1;
        } else {
            // tie: move past the shared value on both sides
            let v = xs[i];
            while i < xs.len() && xs[i] == v {
                i += 1;
            }
            while j < ys.len() && ys[j] == v {
                j += 1;
            }
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Terminal values of component `c` over unflagged paths.
pub fn terminal_values(ens: &PathEnsemble, c: usize) -> Vec<f64> {
    ens.ok_paths()
        .into_iter()
        .map(|j| ens.terminal(j, c))
        .collect()
}

/// Weighted least-squares line fit through `(x_i, y_i)` with per-point
/// standard deviations; returns `(slope, slope_std)`.
pub fn weighted_slope(xs: &[f64], ys: &[f64], sigmas: &[f64]) -> (f64, f64) {
    let mut sw = 0.0;
    let mut swx = 0.0;
    let mut swy = 0.0;
    let mut swxx = 0.0;
    let mut swxy = 0.0;
    for ((&x, &y), &s) in xs.iter().zip(ys).zip(sigmas) {
        let w = 1.0 / (s * s).max(1e-30);
        sw += w;
        swx += w * x;
        swy += w * y;
        swxx += w * x * x;
        swxy += w * x * y;
    }
    let denom = sw * swxx - swx * swx;
    let slope = (sw * swxy - swx * swy) / denom;
    let slope_var = sw / denom;
    (slope, slope_var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_digest_is_stable() {
        let inputs = serde_json::json!({"seed": 42, "grid": "g1"});
        let a = DiagnosticsReport::new("demo", inputs.clone());
        let b = DiagnosticsReport::new("demo", inputs);
        assert_eq!(a.digest, b.digest);
        assert_eq!(a.digest.len(), 64);
    }

    #[test]
    fn report_roundtrips_through_json() {
        let mut r = DiagnosticsReport::new("demo", serde_json::json!({"m": 10}));
        r.stat("ratio", StatValue::with_ci(1.5, 0.1));
        r.threshold("max_ratio", 3.0);
        r.verdict = Verdict::Pass;
        let s = serde_json::to_string(&r).unwrap();
        let back: DiagnosticsReport = serde_json::from_str(&s).unwrap();
        assert_eq!(back.verdict, Verdict::Pass);
        assert_eq!(back.statistics["ratio"].ci_high.unwrap(), 1.6);
    }

    #[test]
    fn ks_of_identical_samples_is_zero() {
        let a = vec![0.1, 0.5, -0.3, 2.0];
        assert_eq!(ks_distance(&a, &a), 0.0);
    }

    #[test]
    fn ks_of_disjoint_samples_is_one() {
        let a = vec![0.0, 1.0, 2.0];
        let b = vec![10.0, 11.0];
        assert_eq!(ks_distance(&a, &b), 1.0);
    }

    #[test]
    fn slope_fit_recovers_line() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 - 0.5 * x).collect();
        let sig = vec![0.1; 10];
        let (slope, std) = weighted_slope(&xs, &ys, &sig);
        assert!((slope + 0.5).abs() < 1e-12);
        assert!(std > 0.0);
    }
}
