//! Experiment configuration: a versioned TOML schema that parses into
//! validated grids and coefficient sets. The exponent-condition verdict is
//! embedded at load time, and a digest of the raw document travels into
//! every artifact.

use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use zvonkin_core::{
    check_exponents, CoefficientSet, DriftSpec, MatrixFn, PrepOptions, Scheme, SigmaSpec,
    UniformGrid, VectorFn,
};

use crate::expr::{self, Expr};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    pub grid: GridConfig,
    pub coefficients: CoefficientConfig,
    #[serde(default)]
    pub exponents: ExponentConfig,
    #[serde(default)]
    pub pde: PdeConfig,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub explosion: Option<ExplosionConfig>,
    #[serde(default)]
    pub checks: ChecksConfig,
}

fn default_version() -> u32 {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    #[serde(default)]
    pub t_start: f64,
    pub t_end: f64,
    pub n_time: usize,
    pub half_width: f64,
    #[serde(default)]
    pub center: f64,
    pub n_space: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientConfig {
    /// One expression per drift component.
    pub drift: Vec<String>,
    /// One expression (isotropic) or `dim * dim` entries row-major.
    pub sigma: Vec<String>,
    pub ellipticity_lower: f64,
    pub ellipticity_upper: f64,
    /// Cap scale: the drift norm is clipped at `scale / sqrt(h)`. Zero keeps
    /// the drift raw.
    #[serde(default)]
    pub drift_cap_scale: f64,
    /// Spatial smoothing radius; `-1` ties it to the grid (`2h`), zero skips.
    #[serde(default)]
    pub mollify_radius: f64,
    /// Sample the (capped, smoothed) coefficients onto the grid before any
    /// solve or simulation. Required when a cap or smoothing is requested.
    #[serde(default)]
    pub prepare: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExponentConfig {
    pub p: f64,
    pub q: f64,
    /// 1 for merely integrable drifts, 2 for bounded drifts.
    pub threshold: f64,
}

impl Default for ExponentConfig {
    fn default() -> Self {
        Self {
            p: 4.0,
            q: 8.0,
            threshold: 2.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PdeConfig {
    /// Source expressions: one (scalar) or `dim` components.
    pub source: Vec<String>,
    pub scheme: String,
}

impl Default for PdeConfig {
    fn default() -> Self {
        Self {
            source: vec!["1".to_string()],
            scheme: "implicit-euler".to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    pub m_paths: usize,
    pub x0: Vec<f64>,
    pub seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            m_paths: 1000,
            x0: vec![0.0],
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    /// all | sparse (initial, 16 checkpoints, terminal)
    pub record: String,
    /// Cap on paths written to the CSV export.
    pub export_paths: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            record: "sparse".to_string(),
            export_paths: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplosionConfig {
    pub levels: Vec<f64>,
    pub horizon: f64,
    pub n_steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ChecksConfig {
    pub feller: FellerCheckConfig,
    pub krylov: KrylovCheckConfig,
    pub noncrossing: NoncrossingCheckConfig,
    pub two_point: TwoPointCheckConfig,
    pub bel: BelCheckConfig,
    pub khasminskii: KhasminskiiCheckConfig,
    pub uniqueness: UniquenessCheckConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FellerCheckConfig {
    pub ladder_steps: Vec<usize>,
    pub x: f64,
    pub y: f64,
    pub slope_lo: f64,
    pub slope_hi: f64,
    /// direct | zvonkin
    pub pipeline: String,
}

impl Default for FellerCheckConfig {
    fn default() -> Self {
        Self {
            ladder_steps: vec![],
            x: 0.05,
            y: -0.05,
            slope_lo: -0.65,
            slope_hi: -0.35,
            pipeline: "direct".to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KrylovCheckConfig {
    pub battery_size: usize,
}

impl Default for KrylovCheckConfig {
    fn default() -> Self {
        Self { battery_size: 10 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoncrossingCheckConfig {
    pub starts: Vec<f64>,
    /// zvonkin | direct
    pub pipeline: String,
    /// Also run the raw direct stepper for contrast (no verdict attached).
    pub contrast: bool,
}

impl Default for NoncrossingCheckConfig {
    fn default() -> Self {
        Self {
            starts: (0..8).map(|i| -0.7 + 0.2 * i as f64).collect(),
            pipeline: "zvonkin".to_string(),
            contrast: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TwoPointCheckConfig {
    pub separations: Vec<f64>,
    pub gammas: Vec<f64>,
}

impl Default for TwoPointCheckConfig {
    fn default() -> Self {
        Self {
            separations: (0..5).map(|i| 0.02 * 2f64.powi(i)).collect(),
            gammas: vec![1.0, -1.0],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BelCheckConfig {
    pub x: f64,
    pub fd_lambda: f64,
    pub std_ladder: Vec<usize>,
}

impl Default for BelCheckConfig {
    fn default() -> Self {
        Self {
            x: 0.3,
            fd_lambda: 1e-4,
            std_ladder: vec![],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KhasminskiiCheckConfig {
    pub lambdas: Vec<f64>,
    pub window_steps: usize,
}

impl Default for KhasminskiiCheckConfig {
    fn default() -> Self {
        Self {
            lambdas: vec![0.25, 0.5, 1.0],
            window_steps: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UniquenessCheckConfig {
    pub levels: usize,
    pub tolerance: f64,
}

impl Default for UniquenessCheckConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            tolerance: 0.08,
        }
    }
}

/// A loaded and validated experiment: compiled expressions, built grid and
/// coefficients, and the exponent verdict.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub raw_toml: String,
    pub grid: UniformGrid,
    pub coeffs: CoefficientSet,
    pub source_exprs: Vec<Arc<Expr>>,
    pub scheme: Scheme,
    pub exponents_ok: bool,
}

fn parse_exprs(list: &[String], what: &str) -> Result<Vec<Arc<Expr>>> {
    list.iter()
        .map(|s| {
            expr::parse(s)
                .map(Arc::new)
                .map_err(|e| anyhow!("{what} expression '{s}': {e}"))
        })
        .collect()
}

impl Experiment {
    pub fn from_toml(raw: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(raw).context("failed to parse the configuration document")?;
        if config.version != 1 {
            bail!("unsupported config version {}", config.version);
        }
        let gc = &config.grid;
        let grid = UniformGrid::with_center(
            gc.dim,
            gc.t_start,
            gc.t_end,
            gc.n_time,
            gc.half_width,
            gc.center,
            gc.n_space,
        )
        .map_err(|e| anyhow!("grid: {e}"))?;

        let cc = &config.coefficients;
        let d = gc.dim;
        if cc.drift.len() != d {
            bail!("need {d} drift component expression(s), got {}", cc.drift.len());
        }
        let drift_exprs = parse_exprs(&cc.drift, "drift")?;
        let sigma_exprs = match cc.sigma.len() {
            1 => parse_exprs(&cc.sigma, "sigma")?,
            n if n == d * d => parse_exprs(&cc.sigma, "sigma")?,
            n => bail!("sigma needs 1 (isotropic) or {} entries, got {n}", d * d),
        };
        if d == 1 {
            for e in drift_exprs.iter().chain(&sigma_exprs) {
                if e.uses_y() {
                    bail!("expression uses 'y' on a one-dimensional grid");
                }
            }
        }

        let de = drift_exprs.clone();
        let drift: VectorFn = Arc::new(move |t, x, out| {
            for (c, e) in de.iter().enumerate() {
                out[c] = e.eval(t, x);
            }
        });
        let se = sigma_exprs.clone();
        let isotropic = se.len() == 1;
        let sigma: MatrixFn = Arc::new(move |t, x, out| {
            if isotropic {
                let v = se[0].eval(t, x);
                out.fill(0.0);
                for i in 0..d {
                    out[i * d + i] = v;
                }
            } else {
                for (c, e) in se.iter().enumerate() {
                    out[c] = e.eval(t, x);
                }
            }
        });
        let raw_coeffs = CoefficientSet::new(
            d,
            DriftSpec::Analytic(drift),
            SigmaSpec::Analytic(sigma),
            cc.ellipticity_lower,
            cc.ellipticity_upper,
            &grid,
        )
        .map_err(|e| anyhow!("coefficients: {e}"))?;

        let needs_prep = cc.drift_cap_scale > 0.0 || cc.mollify_radius != 0.0;
        if needs_prep && !cc.prepare {
            bail!("drift cap or smoothing requested: set coefficients.prepare = true");
        }
        let coeffs = if cc.prepare {
            let cap = if cc.drift_cap_scale > 0.0 {
                Some(cc.drift_cap_scale / grid.h().sqrt())
            } else {
                None
            };
            let radius = if cc.mollify_radius < 0.0 {
                Some(2.0 * grid.h())
            } else if cc.mollify_radius > 0.0 {
                Some(cc.mollify_radius)
            } else {
                None
            };
            raw_coeffs
                .prepared(
                    &grid,
                    PrepOptions {
                        drift_cap: cap,
                        mollify_radius: radius,
                    },
                )
                .map_err(|e| anyhow!("coefficient preparation: {e}"))?
        } else {
            raw_coeffs
        };

        let n_src = config.pde.source.len();
        if n_src != 1 && n_src != d {
            bail!("pde source needs 1 or {d} component expression(s), got {n_src}");
        }
        let source_exprs = parse_exprs(&config.pde.source, "pde source")?;
        let scheme = match config.pde.scheme.as_str() {
            "implicit-euler" => Scheme::ImplicitEuler,
            "crank-nicolson" => Scheme::CrankNicolson,
            other => bail!("unknown scheme '{other}' (implicit-euler | crank-nicolson)"),
        };

        let ec = &config.exponents;
        let exponents_ok = check_exponents(d, ec.p, ec.q, ec.threshold)
            .map_err(|e| anyhow!("exponents: {e}"))?;

        if config.ensemble.x0.len() != d {
            bail!(
                "ensemble start needs {d} coordinate(s), got {}",
                config.ensemble.x0.len()
            );
        }

        Ok(Self {
            config,
            raw_toml: raw.to_string(),
            grid,
            coeffs,
            source_exprs,
            scheme,
            exponents_ok,
        })
    }

    /// SHA-256 digest of the raw configuration document plus the seed.
    pub fn digest(&self) -> String {
        use sha2digest::digest_str;
        digest_str(&format!("{}\nseed={}", self.raw_toml, self.config.ensemble.seed))
    }
}

mod sha2digest {
    pub fn digest_str(s: &str) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(s.as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
version = 1
[grid]
dim = 1
t_end = 1.0
n_time = 100
half_width = 6.0
n_space = 61

[coefficients]
drift = ["0"]
sigma = ["1"]
ellipticity_lower = 0.999
ellipticity_upper = 1.001
"#;

    #[test]
    fn minimal_config_loads() {
        let exp = Experiment::from_toml(MINIMAL).unwrap();
        assert!(exp.exponents_ok);
        assert_eq!(exp.grid.n_space, 61);
        let mut s = [0.0];
        exp.coeffs.sigma_at(0.5, &[1.0], &mut s);
        assert_eq!(s[0], 1.0);
        assert_eq!(exp.digest().len(), 64);
    }

    #[test]
    fn unknown_identifier_is_rejected() {
        let bad = MINIMAL.replace("drift = [\"0\"]", "drift = [\"foo(x)\"]");
        let msg = match Experiment::from_toml(&bad) {
            Err(e) => format!("{e}"),
            Ok(_) => panic!("expected a parse error"),
        };
        assert!(msg.contains("foo") && msg.contains("position"), "{msg}");
    }

    #[test]
    fn ellipticity_mismatch_is_rejected() {
        let bad = MINIMAL.replace("sigma = [\"1\"]", "sigma = [\"2\"]");
        assert!(Experiment::from_toml(&bad).is_err());
    }

    #[test]
    fn preparation_must_be_explicit() {
        let bad = MINIMAL.replace(
            "ellipticity_upper = 1.001",
            "ellipticity_upper = 1.001\ndrift_cap_scale = 1.0",
        );
        let msg = match Experiment::from_toml(&bad) {
            Err(e) => format!("{e}"),
            Ok(_) => panic!("expected a validation error"),
        };
        assert!(msg.contains("prepare"));
    }

    #[test]
    fn exponent_verdict_embedded() {
        let cfg = format!(
            "{MINIMAL}\n[exponents]\np = 2.0\nq = 2.0\nthreshold = 1\n"
        );
        let exp = Experiment::from_toml(&cfg).unwrap();
        assert!(!exp.exponents_ok);
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = format!("{MINIMAL}\nbogus_key = 1\n");
        assert!(Experiment::from_toml(&bad).is_err());
    }
}
