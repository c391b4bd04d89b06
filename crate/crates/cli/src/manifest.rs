//! Run manifest: one JSON file per output directory recording, for every
//! completed stage, its parameters, seed and the hashes of what it read and
//! wrote.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Path relative to the output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub command: String,
    pub seed: u64,
    pub params: serde_json::Value,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub root_seed: u64,
    pub config: String,
    pub stages: BTreeMap<String, StageRecord>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let m = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Ok(Some(m))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&tmp, text)?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn record(dir: &Path, rel: &str) -> Result<FileRecord> {
    Ok(FileRecord {
        path: rel.to_string(),
        sha256: sha256_file(&dir.join(rel))?,
    })
}

/// True when every listed file still exists with the recorded hash.
pub fn files_match(dir: &Path, files: &[FileRecord]) -> bool {
    files
        .iter()
        .all(|f| sha256_file(&dir.join(&f.path)).is_ok_and(|h| h == f.sha256))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_bytes(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn save_load_and_file_checks() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.txt"), b"abc").unwrap();
        let rec = record(dir.path(), "a.txt").unwrap();
        assert_eq!(rec.sha256, sha256_bytes(b"abc"));
        let mut m = Manifest {
            config_hash: "h".into(),
            root_seed: 3,
            ..Default::default()
        };
        m.stages.insert(
            "gen-data".into(),
            StageRecord {
                command: "gen-data".into(),
                seed: 9,
                params: serde_json::json!({"n": 1}),
                inputs: vec![],
                outputs: vec![rec.clone()],
            },
        );
        m.save(dir.path()).unwrap();
        assert_eq!(Manifest::load(dir.path()).unwrap(), Some(m));
        assert!(files_match(dir.path(), &[rec.clone()]));
        fs::write(dir.path().join("a.txt"), b"abd").unwrap();
        assert!(!files_match(dir.path(), &[rec]));
    }
}
