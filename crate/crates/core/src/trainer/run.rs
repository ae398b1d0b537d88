use std::fs;
use std::path::{Path, PathBuf};

use super::{read_loss_log, Checkpoint, LossLogWriter, PPOConfig, TrainState, Trainer};
use crate::datastore::RecordMatrix;
use crate::error::{Error, Result};

/// File layout of a training output directory.
#[derive(Debug, Clone)]
pub struct RunLayout {
    pub dir: PathBuf,
}

impl RunLayout {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn loss_log(&self) -> PathBuf {
        self.dir.join("loss_log.csv")
    }

    pub fn final_checkpoint(&self) -> PathBuf {
        self.dir.join("checkpoint.json")
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.dir.join("checkpoints")
    }

    pub fn periodic_checkpoint(&self, iteration: usize) -> PathBuf {
        self.checkpoint_dir().join(format!("iter_{iteration:07}.json"))
    }

    /// Highest-iteration periodic checkpoint, if any.
    pub fn latest_checkpoint(&self) -> Result<Option<PathBuf>> {
        let dir = self.checkpoint_dir();
        if !dir.is_dir() {
            return Ok(None);
        }
        let mut best: Option<PathBuf> = None;
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
            if name.starts_with("iter_") && name.ends_with(".json") {
                // Zero-padded names sort by iteration.
                if best.as_ref().is_none_or(|b| path > *b) {
                    best = Some(path);
                }
            }
        }
        Ok(best)
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    /// Every file written or rewritten by the run.
    pub files: Vec<PathBuf>,
}

/// Trains on normalized `real`, streaming the loss log and writing periodic and
/// final checkpoints under `out`. With `resume`, continues from the latest
/// periodic checkpoint when one exists.
pub fn train_to_dir(
    real: &RecordMatrix,
    cfg: &PPOConfig,
    out: impl AsRef<Path>,
    resume: bool,
) -> Result<TrainOutcome> {
    let layout = RunLayout::new(out.as_ref());
    fs::create_dir_all(layout.checkpoint_dir()).map_err(|e| Error::io(layout.checkpoint_dir(), e))?;
    let trainer = Trainer::new(real, cfg)?;

    let restored = match (resume, layout.latest_checkpoint()?) {
        (true, Some(path)) => {
            let ck = Checkpoint::load(&path)?;
            ck.check_schema(&real.schema)?;
            let comparable = |c: &PPOConfig| PPOConfig {
                iterations: 0,
                checkpoint_interval: 0,
                ..c.clone()
            };
            if comparable(&ck.config) != comparable(cfg) {
                return Err(Error::Checkpoint(format!(
                    "{}: config differs from the requested run",
                    path.display()
                )));
            }
            let mut rows = read_loss_log(layout.loss_log())?;
            rows.truncate(ck.iteration);
            log::info!("resuming from {} at iteration {}", path.display(), ck.iteration);
            Some(ck.restore(rows)?)
        }
        _ => None,
    };
    let mut state = match restored {
        Some(s) => s,
        None => TrainState::init(&real.schema, cfg)?,
    };
    let mut log = LossLogWriter::resume(layout.loss_log(), &state.history)?;
    let mut files = vec![layout.loss_log()];

    let interval = cfg.checkpoint_interval;
    trainer.run(&mut state, |st, row| {
        log.append(row)?;
        if interval > 0 && st.iteration % interval == 0 {
            let path = layout.periodic_checkpoint(st.iteration);
            Checkpoint::capture(st, &real.schema, cfg, real.rows()).save(&path)?;
            log::debug!("checkpoint {}", path.display());
            files.push(path);
        }
        if st.iteration % 100 == 0 {
            log::info!(
                "iteration {} mean_reward {:.4} L_D {:.4}",
                st.iteration,
                row.mean_reward,
                row.l_d
            );
        }
        Ok(())
    })?;

    let final_path = layout.final_checkpoint();
    Checkpoint::capture(&state, &real.schema, cfg, real.rows()).save(&final_path)?;
    files.push(final_path);
    Ok(TrainOutcome { state, files })
}
