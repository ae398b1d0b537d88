use std::fs::File;
use std::path::{Path, PathBuf};

use super::LossBreakdown;
use crate::error::{Error, Result};

pub const LOSS_LOG_HEADER: [&str; 10] = [
    "iteration",
    "L_clip",
    "L_V",
    "H",
    "M",
    "L_G",
    "L_BCE",
    "R1",
    "L_D",
    "mean_reward",
];

/// Appends one CSV row per iteration, flushing after each row.
pub struct LossLogWriter {
    path: PathBuf,
    inner: csv::Writer<File>,
}

impl LossLogWriter {
    /// Starts a new log, replacing any existing file.
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        inner.write_record(LOSS_LOG_HEADER)?;
        inner.flush().map_err(|e| Error::io(&path, e))?;
        Ok(Self { path, inner })
    }

    /// Rewrites the log keeping only `rows`, then continues appending.
    pub fn resume(path: impl AsRef<Path>, rows: &[LossBreakdown]) -> Result<Self> {
        let mut w = Self::create(path)?;
        for r in rows {
            w.append(r)?;
        }
        Ok(w)
    }

    pub fn append(&mut self, row: &LossBreakdown) -> Result<()> {
        self.inner.serialize(row)?;
        self.inner.flush().map_err(|e| Error::io(&self.path, e))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

pub fn read_loss_log(path: impl AsRef<Path>) -> Result<Vec<LossBreakdown>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != LOSS_LOG_HEADER {
        return Err(Error::Data(format!(
            "{}: unexpected loss-log header {header:?}",
            path.display()
        )));
    }
    r.deserialize().map(|row| Ok(row?)).collect()
}
