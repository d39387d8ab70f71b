//! Run manifests: what was run, with which parameters, on which inputs.
//!
//! Every artifact-producing subcommand writes `<command>.manifest.json`
//! into its output directory and embeds the same manifest in its JSON
//! reports. The standalone file additionally records the wall-clock
//! duration; reports leave it out so reruns with identical inputs are
//! byte-identical.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::errors::CliResult;

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub parameters: BTreeMap<String, Value>,
    pub seed: u64,
    pub inputs: BTreeMap<String, FileDigest>,
    pub tool_version: String,
}

#[derive(Serialize)]
struct ManifestFile<'a> {
    #[serde(flatten)]
    manifest: &'a RunManifest,
    wall_clock_seconds: f64,
}

/// Collects manifest fields while a command runs, then writes the file.
pub struct ManifestBuilder {
    command: &'static str,
    seed: u64,
    parameters: BTreeMap<String, Value>,
    inputs: BTreeMap<String, FileDigest>,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &'static str, seed: u64, parameters: BTreeMap<String, Value>) -> Self {
        Self {
            command,
            seed,
            parameters,
            inputs: BTreeMap::new(),
            started: Instant::now(),
        }
    }

    /// Registers an input file under a role name ("features", "labels", ...)
    /// and records its content digest.
    pub fn input(&mut self, role: &str, path: &Path) -> CliResult<()> {
        let digest = sha256_hex(path)?;
        self.inputs.insert(
            role.to_string(),
            FileDigest {
                path: path.display().to_string(),
                sha256: digest,
            },
        );
        Ok(())
    }

    /// Finalizes the manifest and writes `<command>.manifest.json` with the
    /// elapsed wall-clock time.
    pub fn write(self, out_dir: &Path) -> CliResult<RunManifest> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            parameters: self.parameters,
            seed: self.seed,
            inputs: self.inputs,
            tool_version: format!("gcd {}", env!("CARGO_PKG_VERSION")),
        };
        let file = ManifestFile {
            manifest: &manifest,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        let path = out_dir.join(format!("{}.manifest.json", self.command));
        write_json(&path, &file)?;
        Ok(manifest)
    }
}

pub fn sha256_hex(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Pretty-printed JSON with a trailing newline; key order is fixed by the
/// struct definitions and BTreeMaps, so equal data gives equal bytes.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| gcd_core::GcdError::InvalidInput(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Creates the output directory if needed and returns it as a `PathBuf`.
pub fn ensure_out_dir(path: &Path) -> CliResult<PathBuf> {
    std::fs::create_dir_all(path)?;
    Ok(path.to_path_buf())
}
