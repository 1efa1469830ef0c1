//! Output workspace and run summary.
//!
//! Every artifact is written atomically: bytes go to a hidden temporary
//! file in the output directory which is then renamed into place, so a
//! crash never leaves a half-written file under the final name. The
//! workspace remembers what it wrote; if the run later fails, everything
//! written so far is removed so failed runs leave no partial outputs.
//!
//! `Summary` is the machine-readable face of a run: versioned, with input
//! digests, echoed parameters, scalar metrics, an optional verdict, and
//! the artifact list. It is serialized deterministically (sorted maps,
//! shortest round-trip floats) so identical runs produce identical bytes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// SHA-256 digest of a file, hex-encoded.
pub fn digest_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

/// A named input file and its content digest.
#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Machine-readable record of one run; the single source of truth for
/// downstream harnesses.
#[derive(Debug, Serialize)]
pub struct Summary {
    pub version: &'static str,
    pub subcommand: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub inputs: Vec<InputDigest>,
    pub parameters: BTreeMap<String, String>,
    pub metrics: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<bool>,
    pub artifacts: Vec<String>,
}

impl Summary {
    pub fn new(subcommand: &str) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION"),
            subcommand: subcommand.to_string(),
            seed: None,
            inputs: Vec::new(),
            parameters: BTreeMap::new(),
            metrics: BTreeMap::new(),
            verdict: None,
            artifacts: Vec::new(),
        }
    }

    /// Records an input file with its digest.
    pub fn add_input(&mut self, path: &Path) -> anyhow::Result<()> {
        self.inputs.push(InputDigest { path: path.display().to_string(), sha256: digest_file(path)? });
        Ok(())
    }

    pub fn metric(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.to_string(), value);
    }
}

/// Output directory with atomic writes and failure cleanup.
pub struct Workspace {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Workspace {
    /// Creates the output directory if needed.
    pub fn new(dir: &Path) -> anyhow::Result<Self> {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new() })
    }

    /// Writes `bytes` under `name` via a temporary file plus rename.
    pub fn write_atomic(&mut self, name: &str, bytes: &[u8]) -> anyhow::Result<PathBuf> {
        let final_path = self.dir.join(name);
        let tmp_path = self.dir.join(format!(".{name}.tmp"));
        let result = (|| -> anyhow::Result<()> {
            std::fs::write(&tmp_path, bytes)
                .with_context(|| format!("cannot write {}", tmp_path.display()))?;
            std::fs::rename(&tmp_path, &final_path)
                .with_context(|| format!("cannot move {} into place as {name}", tmp_path.display()))?;
            Ok(())
        })();
        if result.is_err() {
            let _ = std::fs::remove_file(&tmp_path);
            result?;
        }
        self.written.push(final_path.clone());
        Ok(final_path)
    }

    /// Serializes and writes the summary, recording it as an artifact too.
    pub fn write_summary(&mut self, summary: &mut Summary) -> anyhow::Result<PathBuf> {
        summary.artifacts.push("summary.json".to_string());
        let mut bytes = serde_json::to_vec_pretty(summary).context("cannot serialize summary")?;
        bytes.push(b'\n');
        self.write_atomic("summary.json", &bytes)
    }

    /// Removes everything written during this run (failure path).
    pub fn discard_all(&mut self) {
        for path in self.written.drain(..) {
            let _ = std::fs::remove_file(path);
        }
    }
}
