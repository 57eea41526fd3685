//! Run manifests: enough to re-derive an output (tool version, seed, full
//! configuration, input hashes). Directories get `run.json`; a file output
//! `x` gets `x.run.json` beside it.

use std::fs;
use std::path::{Path, PathBuf};

use echoct::io::{read_bytes, write_json};
use echoct::seed::sha256_hex;
use echoct::Result;
use serde::{Deserialize, Serialize};

pub const RUN_MANIFEST: &str = "run.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<InputHash>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            config,
            inputs: Vec::new(),
        }
    }

    /// Hash a file, or every file under a directory in sorted order.
    pub fn input(mut self, path: &Path) -> Result<Self> {
        for file in files_under(path)? {
            self.inputs.push(InputHash {
                path: file.display().to_string(),
                sha256: sha256_hex(&read_bytes(&file)?),
            });
        }
        Ok(self)
    }

    pub fn write_for_dir(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(RUN_MANIFEST), self)
    }

    pub fn write_for_file(&self, file: &Path) -> Result<()> {
        write_json(&file_manifest_path(file), self)
    }
}

pub fn file_manifest_path(file: &Path) -> PathBuf {
    let mut s = file.as_os_str().to_owned();
    s.push(".run.json");
    PathBuf::from(s)
}

/// Manifest recorded for an input file or directory, if there is one.
pub fn manifest_of(path: &Path) -> Option<RunManifest> {
    let candidate = if path.is_dir() {
        path.join(RUN_MANIFEST)
    } else {
        file_manifest_path(path)
    };
    echoct::io::read_json(&candidate).ok()
}

fn files_under(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out = Vec::new();
    let entries = fs::read_dir(path).map_err(|e| io_error(path, e))?;
    let mut children: Vec<PathBuf> = entries
        .map(|e| e.map(|e| e.path()).map_err(|err| io_error(path, err)))
        .collect::<Result<_>>()?;
    children.sort();
    for child in children {
        out.extend(files_under(&child)?);
    }
    Ok(out)
}

fn io_error(path: &Path, source: std::io::Error) -> echoct::Error {
    echoct::Error::Io {
        path: path.to_path_buf(),
        source,
    }
}
