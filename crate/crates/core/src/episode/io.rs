//! JSON-lines episode files.
//!
//! The first line is a metadata object tagged `"meta": true`; each following
//! line holds one episode.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Episode;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub meta: bool,
    pub d_obs: usize,
    pub num_actions: usize,
    pub t_max: usize,
    pub gamma: f64,
}

impl DatasetMeta {
    pub fn new(d_obs: usize, num_actions: usize, t_max: usize, gamma: f64) -> Self {
        Self {
            meta: true,
            d_obs,
            num_actions,
            t_max,
            gamma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeFile {
    pub meta: Option<DatasetMeta>,
    pub episodes: Vec<Episode>,
}

impl EpisodeFile {
    pub fn new(meta: DatasetMeta, episodes: Vec<Episode>) -> Self {
        Self {
            meta: Some(meta),
            episodes,
        }
    }

    pub fn require_meta(&self) -> Result<&DatasetMeta> {
        self.meta
            .as_ref()
            .ok_or_else(|| Error::Schema("episode file has no metadata line".into()))
    }
}

pub fn read_episodes(path: impl AsRef<Path>) -> Result<EpisodeFile> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut out = EpisodeFile::default();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| parse_err(line_no, e.to_string()))?;
        if value.get("meta").and_then(serde_json::Value::as_bool) == Some(true) {
            if out.meta.is_some() || !out.episodes.is_empty() {
                return Err(parse_err(line_no, "metadata must be the first record".into()));
            }
            out.meta =
                Some(serde_json::from_value(value).map_err(|e| parse_err(line_no, e.to_string()))?);
            continue;
        }
        let ep: Episode =
            serde_json::from_value(value).map_err(|e| parse_err(line_no, e.to_string()))?;
        check_schema(&out, &ep).map_err(|msg| Error::Schema(format!("line {line_no}: {msg}")))?;
        out.episodes.push(ep);
    }
    Ok(out)
}

fn check_schema(file: &EpisodeFile, ep: &Episode) -> Result<(), String> {
    if let Some(first) = file.episodes.first() {
        if ep.num_agents != first.num_agents {
            return Err(format!(
                "num_agents {} differs from earlier episodes ({})",
                ep.num_agents, first.num_agents
            ));
        }
        if ep.obs_dim() != first.obs_dim() {
            return Err(format!(
                "observation width {} differs from earlier episodes ({})",
                ep.obs_dim(),
                first.obs_dim()
            ));
        }
    }
    let (d_obs, num_actions) = match &file.meta {
        Some(m) => {
            if ep.len() > m.t_max {
                return Err(format!("episode length {} exceeds t_max {}", ep.len(), m.t_max));
            }
            (m.d_obs, m.num_actions)
        }
        None => (ep.obs_dim(), usize::MAX),
    };
    ep.validate(d_obs, num_actions).map_err(|e| e.to_string())
}

pub fn write_episodes(path: impl AsRef<Path>, file: &EpisodeFile) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    if let Some(meta) = &file.meta {
        serde_json::to_writer(&mut w, meta)?;
        w.write_all(b"\n")?;
    }
    for ep in &file.episodes {
        serde_json::to_writer(&mut w, ep)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
