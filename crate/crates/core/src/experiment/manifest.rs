use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_SCHEMA: &str = "daftlab.manifest";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub status: CellStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exit_code: Option<i32>,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
    pub finished_at: u64,
    pub wall_clock_secs: f64,
}

/// Index of everything a run produced. Timestamps and wall-clock times live
/// only here, so every other artifact is reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub schema_version: u32,
    pub config_hash: String,
    pub code_version: String,
    pub created_at: u64,
    pub updated_at: u64,
    pub pretrained: BTreeMap<String, ManifestEntry>,
    pub cells: BTreeMap<String, ManifestEntry>,
    pub reports: Vec<String>,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(config_hash: String) -> Self {
        let now = unix_now();
        Self {
            schema: MANIFEST_SCHEMA.into(),
            schema_version: MANIFEST_VERSION,
            config_hash,
            code_version: env!("CARGO_PKG_VERSION").into(),
            created_at: now,
            updated_at: now,
            pretrained: BTreeMap::new(),
            cells: BTreeMap::new(),
            reports: Vec::new(),
        }
    }

    /// Loads `path` if it exists. A manifest written for another config is
    /// an error so runs never mix.
    pub fn open(path: &Path, config_hash: &str) -> Result<Self> {
        if !path.exists() {
            return Ok(Self::new(config_hash.to_string()));
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_slice(&bytes)?;
        if m.schema != MANIFEST_SCHEMA || m.schema_version != MANIFEST_VERSION {
            return Err(Error::Serde(format!("{} is not a version {MANIFEST_VERSION} manifest", path.display())));
        }
        if m.config_hash != config_hash {
            return Err(Error::Config(format!(
                "{} belongs to a run with config hash {}, current config hashes to {config_hash}",
                path.display(),
                m.config_hash
            )));
        }
        Ok(m)
    }

    pub fn save(&mut self, path: &Path) -> Result<()> {
        self.updated_at = unix_now();
        write_file(path, &json_bytes(self)?)
    }

    /// True when `entry` is done and all its artifacts are on disk.
    pub fn is_complete(entry: Option<&ManifestEntry>, root: &Path) -> bool {
        entry.is_some_and(|e| {
            e.status == CellStatus::Done && e.artifacts.iter().all(|a| root.join(a).exists())
        })
    }
}

pub(crate) fn json_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn relative(root: &Path, path: &Path) -> String {
    path.strip_prefix(root)
        .unwrap_or(path)
        .to_string_lossy()
        .replace('\\', "/")
}

pub(crate) fn paths_relative(root: &Path, paths: &[PathBuf]) -> Vec<String> {
    paths.iter().map(|p| relative(root, p)).collect()
}
