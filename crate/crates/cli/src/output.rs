//! Output directory handling: artifact registration, the manifest index, and
//! machine-readable error documents.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

#[derive(Debug, Serialize)]
struct ArtifactEntry {
    name: String,
    path: String,
    kind: String,
}

#[derive(Debug, Serialize)]
struct ManifestIndex<'a> {
    command: &'a str,
    config_digest: &'a str,
    seed: u64,
    artifacts: &'a [ArtifactEntry],
}

pub struct OutputDir {
    root: PathBuf,
    command: String,
    config_digest: String,
    seed: u64,
    artifacts: Vec<ArtifactEntry>,
}

impl OutputDir {
    pub fn create(root: &Path, command: &str, config_digest: &str, seed: u64) -> Result<Self> {
        std::fs::create_dir_all(root)
            .with_context(|| format!("cannot create output directory {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            command: command.to_string(),
            config_digest: config_digest.to_string(),
            seed,
            artifacts: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn register(&mut self, name: &str, kind: &str) -> PathBuf {
        let path = self.path(name);
        self.artifacts.push(ArtifactEntry {
            name: name.to_string(),
            path: path.display().to_string(),
            kind: kind.to_string(),
        });
        path
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, kind: &str, value: &T) -> Result<()> {
        let path = self.register(name, kind);
        let text = serde_json::to_string_pretty(value)?;
        std::fs::write(&path, text + "\n")
            .with_context(|| format!("cannot write {}", path.display()))?;
        Ok(())
    }

    /// A plot-ready line stub next to a CSV scan.
    pub fn write_gnuplot_stub(
        &mut self,
        name: &str,
        csv: &str,
        title: &str,
        logscale: bool,
    ) -> Result<()> {
        let path = self.register(name, "gnuplot");
        let mut text = String::new();
        text.push_str("set datafile separator ','\n");
        if logscale {
            text.push_str("set logscale xy\n");
        }
        text.push_str(&format!(
            "plot '{csv}' using 1:2 with linespoints title '{title}'\n"
        ));
        std::fs::write(&path, text)?;
        Ok(())
    }

    /// Write `index.json` listing everything the command produced.
    pub fn finalize(&self) -> Result<()> {
        let index = ManifestIndex {
            command: &self.command,
            config_digest: &self.config_digest,
            seed: self.seed,
            artifacts: &self.artifacts,
        };
        let text = serde_json::to_string_pretty(&index)?;
        std::fs::write(self.root.join("index.json"), text + "\n")?;
        Ok(())
    }
}

#[derive(Debug, Serialize)]
pub struct ErrorDocument {
    pub kind: String,
    pub message: String,
}

/// Persist a machine-readable error next to whatever partial outputs exist.
pub fn write_error(root: &Path, kind: &str, message: &str) {
    let _ = std::fs::create_dir_all(root);
    let doc = ErrorDocument {
        kind: kind.to_string(),
        message: message.to_string(),
    };
    if let Ok(text) = serde_json::to_string_pretty(&doc) {
        let _ = std::fs::write(root.join("error.json"), text + "\n");
    }
}
