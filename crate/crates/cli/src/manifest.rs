use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use gcon::artifact::sha256_hex;
use gcon::{Error, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(FileDigest {
            path: path.to_path_buf(),
            sha256: sha256_hex(&bytes),
        })
    }

    pub fn file_name(&self) -> String {
        self.path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

/// Everything needed to rerun a subcommand and check its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub subcommand: String,
    /// Fully resolved settings, defaults included.
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<FileDigest>,
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    pub outputs: Vec<FileDigest>,
    pub started_unix_seconds: u64,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Artifact(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Artifact(e.to_string()))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Output digests keyed by file name.
    pub fn output_digests(&self) -> BTreeMap<String, String> {
        self.outputs.iter().map(|f| (f.file_name(), f.sha256.clone())).collect()
    }
}
