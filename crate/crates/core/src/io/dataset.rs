use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::raw;
use crate::error::{Error, Result};
use crate::optics::OpticalConfig;
use crate::scenes::SceneSpec;

pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the dataset directory.
    pub path: String,
    pub sha256: String,
}

/// Ties a dataset directory together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub scene: SceneSpec,
    pub optics: OpticalConfig,
    pub seed: u64,
    pub frame_seeds: Vec<u64>,
    pub files: Vec<FileEntry>,
}

pub fn hash_file(path: &Path) -> Result<String> {
    Ok(raw::sha256_hex(&fs::read(path)?))
}

impl DatasetManifest {
    pub const FILE_NAME: &'static str = "dataset.json";

    /// Records `names` (relative to `dir`) with their current hashes.
    pub fn add_files(&mut self, dir: &Path, names: &[&str]) -> Result<()> {
        for name in names {
            self.files.push(FileEntry { path: name.to_string(), sha256: hash_file(&dir.join(name))? });
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join(Self::FILE_NAME), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Loads the manifest and verifies every listed file's hash.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(Self::FILE_NAME);
        let m: Self = serde_json::from_str(&fs::read_to_string(&path)?)?;
        raw::check_version(&path, DATASET_VERSION, m.version)?;
        for f in &m.files {
            let p = dir.join(&f.path);
            let actual = hash_file(&p)?;
            if actual != f.sha256 {
                return Err(Error::corrupt(&p, format!("checksum mismatch: manifest {}, file {actual}", f.sha256)));
            }
        }
        Ok(m)
    }
}
