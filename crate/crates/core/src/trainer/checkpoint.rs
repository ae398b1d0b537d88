use std::fs;
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{LossBreakdown, OptimizerState, PPOConfig, TrainState};
use crate::critic::DiscriminatorParams;
use crate::datastore::FeatureSchema;
use crate::error::{Error, Result};
use crate::policy::GeneratorParams;

pub const CHECKPOINT_FORMAT: &str = "rlsyn-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Exact position of a ChaCha8 stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSnapshot {
    /// 32-byte key, hex encoded.
    pub seed: String,
    pub stream: u64,
    /// Word position as a decimal string; it exceeds 64 bits.
    pub word_pos: String,
}

impl RngSnapshot {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = |what: &str| Error::Checkpoint(format!("malformed rng {what}"));
        if self.seed.len() != 64 {
            return Err(bad("seed"));
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad("seed"))?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad("word position"))?);
        Ok(rng)
    }
}

/// Everything needed to resume training or to generate records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// Schema including the normalization stats of the training split.
    pub schema: FeatureSchema,
    pub schema_fingerprint: String,
    pub config: PPOConfig,
    pub iteration: usize,
    pub train_rows: usize,
    pub generator: GeneratorParams,
    pub discriminator: DiscriminatorParams,
    pub gen_optimizer: OptimizerState,
    pub disc_optimizer: OptimizerState,
    pub rng: RngSnapshot,
}

impl Checkpoint {
    pub fn capture(
        state: &TrainState,
        schema: &FeatureSchema,
        cfg: &PPOConfig,
        train_rows: usize,
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            schema: schema.clone(),
            schema_fingerprint: schema.fingerprint(),
            config: cfg.clone(),
            iteration: state.iteration,
            train_rows,
            generator: state.generator.clone(),
            discriminator: state.discriminator.clone(),
            gen_optimizer: state.gen_opt.clone(),
            disc_optimizer: state.disc_opt.clone(),
            rng: RngSnapshot::capture(&state.rng),
        }
    }

    /// Rebuilds the training state; `history` becomes the loss history.
    pub fn restore(&self, history: Vec<LossBreakdown>) -> Result<TrainState> {
        if history.len() != self.iteration {
            return Err(Error::Checkpoint(format!(
                "checkpoint at iteration {} but {} loss rows supplied",
                self.iteration,
                history.len()
            )));
        }
        Ok(TrainState {
            generator: self.generator.clone(),
            discriminator: self.discriminator.clone(),
            gen_opt: self.gen_optimizer.clone(),
            disc_opt: self.disc_optimizer.clone(),
            iteration: self.iteration,
            rng: self.rng.restore()?,
            history,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(text)?;
        ck.verify()?;
        Ok(ck)
    }

    fn verify(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format `{}`", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (this build reads {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        if self.schema.fingerprint() != self.schema_fingerprint {
            return Err(Error::Checkpoint("schema fingerprint does not match stored schema".into()));
        }
        self.generator.net.layout.check(&self.schema)?;
        if self.discriminator.net.input_width != self.schema.width() {
            return Err(Error::Checkpoint("discriminator width does not match schema".into()));
        }
        self.config.validate()
    }

    /// Errors unless `schema` has the same column layout as the checkpoint.
    pub fn check_schema(&self, schema: &FeatureSchema) -> Result<()> {
        if schema.fingerprint() == self.schema_fingerprint {
            Ok(())
        } else {
            Err(Error::Checkpoint(format!(
                "schema fingerprint {} does not match checkpoint {}",
                schema.fingerprint(),
                self.schema_fingerprint
            )))
        }
    }

    /// Writes to a sibling temp file and renames it into place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = PathBuf::from(format!("{}.tmp", path.display()));
        fs::write(&tmp, self.to_json()?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::Checkpoint(format!("{}: {j}", path.display())),
            other => other,
        })
    }
}
