//! Versioned JSON checkpoints.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::EstimatorKind;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// A serialized model: configuration plus flat parameter arrays per sub-model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub estimator: EstimatorKind,
    pub model: serde_json::Value,
}

impl Checkpoint {
    pub fn new<M: Serialize>(estimator: EstimatorKind, model: &M) -> Result<Self> {
        Ok(Self {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            estimator,
            model: serde_json::to_value(model)?,
        })
    }

    pub fn into_model<M: DeserializeOwned>(self, expected: EstimatorKind) -> Result<M> {
        if self.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "checkpoint schema version {} is not supported (expected {CHECKPOINT_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.estimator != expected {
            return Err(Error::Config(format!(
                "checkpoint holds a {} model, not {}",
                self.estimator.as_str(),
                expected.as_str()
            )));
        }
        Ok(serde_json::from_value(self.model)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }
}
