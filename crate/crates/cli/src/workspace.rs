//! Output directory handling: exclusive lock, staged writes and stage
//! bookkeeping in the manifest.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;

use crate::manifest::{self, FileRecord, Manifest, StageRecord};

const LOCK_FILE: &str = ".eaq.lock";
const PARTIAL_SUFFIX: &str = ".partial";

/// Held for the lifetime of a command; removes the lock file on drop.
struct DirLock(PathBuf);

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(Self(path))
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => bail!(
                "output directory {} is locked by another run (remove {} if that run is gone)",
                dir.display(),
                path.display()
            ),
            Err(e) => Err(e).with_context(|| format!("creating {}", path.display())),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// Declared outputs of one stage; closures write to the staged paths.
pub struct Staging {
    dir: PathBuf,
    outputs: Vec<String>,
}

impl Staging {
    /// Where the stage must write output `rel`.
    pub fn path(&self, rel: &str) -> PathBuf {
        assert!(self.outputs.iter().any(|o| o == rel), "undeclared output {rel}");
        self.dir.join(format!("{rel}{PARTIAL_SUFFIX}"))
    }

    fn cleanup(&self) {
        for rel in &self.outputs {
            let _ = fs::remove_file(self.dir.join(format!("{rel}{PARTIAL_SUFFIX}")));
        }
    }

    fn commit(&self) -> Result<()> {
        for rel in &self.outputs {
            let staged = self.dir.join(format!("{rel}{PARTIAL_SUFFIX}"));
            if !staged.exists() {
                bail!("stage did not produce {rel}");
            }
        }
        for rel in &self.outputs {
            fs::rename(self.dir.join(format!("{rel}{PARTIAL_SUFFIX}")), self.dir.join(rel))?;
        }
        Ok(())
    }
}

pub struct Stage<'a> {
    pub key: String,
    pub command: &'a str,
    pub seed: u64,
    pub params: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

pub struct Workspace {
    dir: PathBuf,
    manifest: Manifest,
    force: bool,
    _lock: DirLock,
}

impl Workspace {
    pub fn open(dir: &Path, config_text: &str, root_seed: u64, force: bool) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let lock = DirLock::acquire(dir)?;
        let mut manifest = Manifest::load(dir)?.unwrap_or_default();
        manifest.config_hash = manifest::sha256_bytes(config_text.as_bytes());
        manifest.config = config_text.to_string();
        manifest.root_seed = root_seed;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            force,
            _lock: lock,
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    #[cfg(test)]
    fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    /// Run `body` unless an identical stage already completed and its files
    /// are intact. Returns whether the body ran.
    pub fn run(&mut self, stage: Stage<'_>, body: impl FnOnce(&Staging) -> Result<()>) -> Result<bool> {
        for rel in &stage.inputs {
            if !self.path(rel).exists() {
                bail!("{}: missing input {rel}; run the stage that produces it first", stage.key);
            }
        }
        let inputs = stage
            .inputs
            .iter()
            .map(|rel| manifest::record(&self.dir, rel))
            .collect::<Result<Vec<FileRecord>>>()?;

        if !self.force {
            if let Some(prev) = self.manifest.stages.get(&stage.key) {
                let same = prev.command == stage.command
                    && prev.seed == stage.seed
                    && prev.params == stage.params
                    && prev.inputs == inputs
                    && prev.outputs.iter().map(|o| &o.path).eq(stage.outputs.iter())
                    && manifest::files_match(&self.dir, &prev.outputs);
                if same {
                    info!("{}: up to date, skipping", stage.key);
                    return Ok(false);
                }
            }
        }

        for rel in &stage.outputs {
            if let Some(parent) = self.path(rel).parent() {
                fs::create_dir_all(parent)?;
            }
        }
        let staging = Staging {
            dir: self.dir.clone(),
            outputs: stage.outputs.clone(),
        };
        info!("{}: running", stage.key);
        if let Err(e) = body(&staging).and_then(|_| staging.commit()) {
            staging.cleanup();
            return Err(e.context(format!("stage {} failed", stage.key)));
        }
        let outputs = stage
            .outputs
            .iter()
            .map(|rel| manifest::record(&self.dir, rel))
            .collect::<Result<Vec<FileRecord>>>()?;
        self.manifest.stages.insert(
            stage.key.clone(),
            StageRecord {
                command: stage.command.to_string(),
                seed: stage.seed,
                params: stage.params,
                inputs,
                outputs,
            },
        );
        self.manifest.save(&self.dir)?;
        Ok(true)
    }

    /// Persist the manifest even when every stage was skipped.
    pub fn finish(&self) -> Result<()> {
        self.manifest.save(&self.dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stage(outputs: &[&str]) -> Stage<'static> {
        Stage {
            key: "demo".into(),
            command: "demo",
            seed: 1,
            params: serde_json::json!({}),
            inputs: vec![],
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn second_open_is_rejected_while_locked() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::open(dir.path(), "", 0, false).unwrap();
        assert!(Workspace::open(dir.path(), "", 0, false).is_err());
        drop(ws);
        assert!(Workspace::open(dir.path(), "", 0, false).is_ok());
    }

    #[test]
    fn skips_completed_stage_unless_forced() {
        let dir = tempfile::tempdir().unwrap();
        let mut ws = Workspace::open(dir.path(), "", 0, false).unwrap();
        let write = |s: &Staging| Ok(fs::write(s.path("out/a.txt"), b"x")?);
        assert!(ws.run(stage(&["out/a.txt"]), write).unwrap());
        assert!(!ws.run(stage(&["out/a.txt"]), write).unwrap());
        fs::write(dir.path().join("out/a.txt"), b"tampered").unwrap();
        assert!(ws.run(stage(&["out/a.txt"]), write).unwrap());
        drop(ws);
        let mut ws = Workspace::open(dir.path(), "", 0, true).unwrap();
        assert!(ws.run(stage(&["out/a.txt"]), write).unwrap());
    }

    #[test]
    fn failed_stage_leaves_no_partial_output() {
        let dir = tempfile::tempdir().unwrap();
        let mut ws = Workspace::open(dir.path(), "", 0, false).unwrap();
        let err = ws
            .run(stage(&["a.txt", "b.txt"]), |s| {
                fs::write(s.path("a.txt"), b"half")?;
                bail!("boom")
            })
            .unwrap_err();
        assert!(format!("{err:#}").contains("boom"));
        assert!(!dir.path().join("a.txt").exists());
        assert!(!dir.path().join("a.txt.partial").exists());
        assert!(ws.manifest().stages.is_empty());
    }
}
