//! Versioned JSON checkpoints: everything needed to rebuild trees and
//! rerun extraction without retraining.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Vocab;
use crate::error::{RaeError, Result};
use crate::model::{EmbeddingStore, RaeParams};
use crate::training::TrainConfig;

pub const CHECKPOINT_FORMAT: &str = "rae-checkpoint-v1";

/// On-disk model bundle: hyperparameters (including h, class count and
/// the init seed), vocabulary, fixed base vectors W, learned offsets L
/// and the weight matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub train_config: TrainConfig,
    pub vocab: Vocab,
    pub store: EmbeddingStore,
    pub params: RaeParams,
}

/// A loaded model ready for forest building.
#[derive(Debug, Clone)]
pub struct TrainedRae {
    pub vocab: Vocab,
    pub store: EmbeddingStore,
    pub params: RaeParams,
}

impl Checkpoint {
    pub fn new(
        train_config: TrainConfig,
        vocab: Vocab,
        store: EmbeddingStore,
        params: RaeParams,
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_owned(),
            train_config,
            vocab,
            store,
            params,
        }
    }

    /// Internal consistency: declared dimensions match the arrays.
    pub fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(RaeError::Format(format!(
                "unsupported checkpoint format {:?}, expected {CHECKPOINT_FORMAT:?}",
                self.format
            )));
        }
        self.params.check_shapes()?;
        let h = self.train_config.h;
        if self.params.h() != h || self.store.h() != h {
            return Err(RaeError::Format(format!(
                "checkpoint declares h = {h} but stores arrays of width {} / {}",
                self.store.h(),
                self.params.h()
            )));
        }
        if self.params.n_classes() != self.train_config.n_classes {
            return Err(RaeError::Format(format!(
                "checkpoint declares {} classes but the label layer has {} rows",
                self.train_config.n_classes,
                self.params.n_classes()
            )));
        }
        if self.vocab.len() != self.store.vocab_size() {
            return Err(RaeError::Format(format!(
                "vocabulary has {} words but embeddings have {} rows",
                self.vocab.len(),
                self.store.vocab_size()
            )));
        }
        Ok(())
    }

    pub fn into_trained(self) -> TrainedRae {
        TrainedRae {
            vocab: self.vocab,
            store: self.store,
            params: self.params,
        }
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    checkpoint.validate()?;
    let file = File::create(path).map_err(|e| RaeError::io(path, e))?;
    serde_json::to_writer(BufWriter::new(file), checkpoint)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| RaeError::io(path, e))?;
    let checkpoint: Checkpoint = serde_json::from_reader(BufReader::new(file))?;
    checkpoint.validate()?;
    Ok(checkpoint)
}
