//! Per-run provenance record written next to every command's outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vispgan::{Error, Result};

pub const MANIFEST_SUFFIX: &str = ".manifest.json";
pub const DIR_MANIFEST: &str = "run_manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub argv: Vec<String>,
    /// The configuration after defaults, config file and flags are merged.
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<String>,
    /// SHA-256 over a sorted listing of `<blob hash> <path>` lines, where a
    /// blob hash is SHA-256 of `blob <len>\0<bytes>`.
    pub input_hash: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub outputs: Vec<String>,
    /// Headline numbers of the run, if any.
    pub summary: serde_json::Value,
}

pub fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis())
}

fn is_manifest(path: &Path) -> bool {
    path.file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n == DIR_MANIFEST || n.ends_with(MANIFEST_SUFFIX))
}

fn collect_files(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
    if meta.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(path, err)))
            .collect::<Result<_>>()?;
        entries.sort();
        for e in entries {
            collect_files(&e, out)?;
        }
    } else if !is_manifest(path) {
        out.push(path.to_path_buf());
    }
    Ok(())
}

pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

/// Content hash of files and directory trees; run manifests inside them are
/// skipped so a rerun hashes the same bytes.
pub fn hash_inputs(paths: &[PathBuf]) -> Result<String> {
    let mut lines = Vec::new();
    for root in paths {
        let mut files = Vec::new();
        collect_files(root, &mut files)?;
        for f in files {
            let bytes = fs::read(&f).map_err(|e| Error::io(&f, e))?;
            let rel = f
                .strip_prefix(root)
                .ok()
                .filter(|r| !r.as_os_str().is_empty())
                .unwrap_or(&f);
            lines.push(format!(
                "{} {}/{}",
                blob_hash(&bytes),
                root.display(),
                rel.display()
            ));
        }
    }
    lines.sort();
    let mut h = Sha256::new();
    for l in &lines {
        h.update(l.as_bytes());
        h.update(b"\n");
    }
    Ok(hex::encode(h.finalize()))
}

/// Where the manifest of a run with this primary output goes.
pub fn manifest_path(primary: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        primary.join(DIR_MANIFEST)
    } else {
        let mut name = primary
            .file_name()
            .map(|n| n.to_os_string())
            .unwrap_or_default();
        name.push(MANIFEST_SUFFIX);
        primary.with_file_name(name)
    }
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        vispgan::vsgc::write_atomic(path, text.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
    }
}
