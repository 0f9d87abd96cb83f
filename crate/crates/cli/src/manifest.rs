use std::collections::BTreeMap;
use std::path::Path;

use reelcrowd_core::fsutil::write_json_atomic;
use reelcrowd_core::hashing::sha256_hex;
use reelcrowd_core::{Error, Result};
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

pub const MANIFEST_FILE: &str = "run_manifest.json";

/// Reproducibility record of one pipeline run. It holds no timestamps or
/// absolute output paths, so mock runs with equal inputs compare equal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub status: RunStatus,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    pub rng_seed: u64,
    pub mock: bool,
    pub video_id: String,
    pub config: serde_json::Value,
    /// sha256 of every input file, keyed by role.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<OutputFile>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    /// Relative to the artifact directory, with `/` separators.
    pub path: String,
    pub sha256: String,
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::input(format!("cannot read {}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

/// Every file under `root` except the manifest and temporary files, sorted.
pub fn collect_outputs(root: &Path) -> Result<Vec<OutputFile>> {
    let mut out = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::Io(e.into()))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let name = entry.file_name().to_string_lossy();
        if name == MANIFEST_FILE || name.starts_with('.') {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(root)
            .expect("walk stays under root")
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        out.push(OutputFile {
            sha256: hash_file(entry.path())?,
            path: rel,
        });
    }
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json_atomic(&dir.join(MANIFEST_FILE), self)
    }
}
