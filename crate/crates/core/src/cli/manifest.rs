use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommandKind {
    Train,
    Generate,
    Evaluate,
    Benchmark,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Succeeded,
    Failed,
}

/// Record of one command invocation, enough to replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: CommandKind,
    /// Full argument vector of the invocation.
    pub argv: Vec<String>,
    pub config_path: Option<PathBuf>,
    pub config_fingerprint: Option<String>,
    pub inputs: Vec<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub tool_version: String,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub status: RunStatus,
    pub error: Option<String>,
    pub outputs: Vec<PathBuf>,
    /// Where the manifest itself is written.
    #[serde(skip)]
    pub file: PathBuf,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn start(command: CommandKind, out_dir: &Path, seed: u64) -> Self {
        Self {
            command,
            argv: std::env::args().collect(),
            config_path: None,
            config_fingerprint: None,
            inputs: Vec::new(),
            out_dir: out_dir.to_path_buf(),
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix: now(),
            finished_unix: None,
            status: RunStatus::Running,
            error: None,
            outputs: Vec::new(),
            file: out_dir.join(MANIFEST_FILE),
        }
    }

    /// Atomically replaces the manifest file.
    pub fn write(&self) -> Result<()> {
        if let Some(dir) = self.file.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = PathBuf::from(format!("{}.tmp", self.file.display()));
        fs::write(&tmp, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &self.file).map_err(|e| Error::io(&self.file, e))
    }

    pub fn add_output(&mut self, path: impl Into<PathBuf>) {
        let p = path.into();
        if !self.outputs.contains(&p) {
            self.outputs.push(p);
        }
    }

    /// Stamps the end time and outcome, then rewrites the file.
    pub fn finish(&mut self, error: Option<&Error>) -> Result<()> {
        self.finished_unix = Some(now());
        self.status = if error.is_some() {
            RunStatus::Failed
        } else {
            RunStatus::Succeeded
        };
        self.error = error.map(ToString::to_string);
        self.write()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Self = serde_json::from_str(&text)?;
        m.file = path.to_path_buf();
        Ok(m)
    }
}
