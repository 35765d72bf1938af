//! Preset resolution: named experiment configurations shipped with the
//! binary, overridable through a directory of TOML files.

use std::path::PathBuf;

use anyhow::{bail, Result};

/// Environment variable pointing at an alternative presets directory.
pub const PRESETS_ENV: &str = "ZVONKIN_PRESETS";

const EMBEDDED: &[(&str, &str)] = &[
    ("brownian", include_str!("../presets/v1/brownian.toml")),
    ("constant_drift", include_str!("../presets/v1/constant_drift.toml")),
    ("ou", include_str!("../presets/v1/ou.toml")),
    ("smooth", include_str!("../presets/v1/smooth.toml")),
    ("smooth_sigma", include_str!("../presets/v1/smooth_sigma.toml")),
    ("singular", include_str!("../presets/v1/singular.toml")),
    ("singular_strong", include_str!("../presets/v1/singular_strong.toml")),
    ("blowup", include_str!("../presets/v1/blowup.toml")),
    ("unit_source", include_str!("../presets/v1/unit_source.toml")),
    ("manufactured", include_str!("../presets/v1/manufactured.toml")),
];

pub fn preset_names() -> Vec<&'static str> {
    EMBEDDED.iter().map(|(n, _)| *n).collect()
}

/// Resolve a preset to its TOML text: the override directory wins, then the
/// embedded copies.
pub fn load_preset(name: &str) -> Result<String> {
    if let Ok(dir) = std::env::var(PRESETS_ENV) {
        let path = PathBuf::from(dir).join(format!("{name}.toml"));
        if path.exists() {
            return Ok(std::fs::read_to_string(&path)?);
        }
    }
    for (n, text) in EMBEDDED {
        if *n == name {
            return Ok(text.to_string());
        }
    }
    bail!(
        "unknown preset '{name}' (available: {})",
        preset_names().join(", ")
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Experiment;

    #[test]
    fn every_embedded_preset_parses_and_validates() {
        for name in preset_names() {
            let raw = load_preset(name).unwrap();
            let exp = Experiment::from_toml(&raw)
                .unwrap_or_else(|e| panic!("preset {name} invalid: {e}"));
            assert!(exp.grid.n_space >= 2, "{name}");
        }
    }

    #[test]
    fn unknown_preset_lists_options() {
        let err = load_preset("nope").unwrap_err();
        assert!(format!("{err}").contains("brownian"));
    }
}
