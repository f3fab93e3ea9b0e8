use std::path::{Path, PathBuf};

use moldflow::Error;
use serde::{Deserialize, Serialize};

use crate::CliResult;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Enough to rerun a command: canonical arguments with absolute paths and
/// every resolved setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub argv: Vec<String>,
    pub config: Vec<(String, String)>,
    pub seeds: Vec<u64>,
}

impl Manifest {
    pub fn new(command: &str, argv: Vec<String>, config: Vec<(String, String)>, seeds: Vec<u64>) -> Self {
        Self {
            tool: "mfo".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            argv,
            config,
            seeds,
        }
    }

    pub fn write(&self, dir: &Path) -> CliResult<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        moldflow::evaluation::write_file(&path, text.as_bytes())?;
        Ok(path)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingRecord(format!("manifest {}", path.display())),
            _ => Error::Io { path: path.to_path_buf(), source: e },
        })?;
        Ok(serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?)
    }
}
