use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Ensemble, NamedTensor, TabNetConfig, TabNetModel};
use crate::dataset::Schema;
use crate::diffgraph::BatchNormState;
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "sevnet-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct MemberFile {
    params: Vec<NamedTensor>,
    batch_norm: Vec<BatchNormState>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    schema_hash: String,
    schema: Schema,
    config: TabNetConfig,
    n_features: usize,
    members: Vec<MemberFile>,
}

/// A trained ensemble bundled with the schema its inputs must follow.
///
/// Stored as JSON; floats are written in shortest round-trip form, so a reload
/// reproduces every parameter bit for bit.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub schema: Schema,
    pub ensemble: Ensemble,
}

impl Checkpoint {
    pub fn new(schema: Schema, ensemble: Ensemble) -> Result<Self> {
        if schema.n_features() != ensemble.n_features() || schema.n_classes() != ensemble.n_classes() {
            return Err(Error::Contract(format!(
                "schema has {} features / {} classes, model {} / {}",
                schema.n_features(),
                schema.n_classes(),
                ensemble.n_features(),
                ensemble.n_classes()
            )));
        }
        Ok(Self { schema, ensemble })
    }

    pub fn to_json(&self) -> Result<String> {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            schema_hash: self.schema.hash(),
            schema: self.schema.clone(),
            config: self.ensemble.config().clone(),
            n_features: self.ensemble.n_features(),
            members: self
                .ensemble
                .members()
                .iter()
                .map(|m| MemberFile {
                    params: m.params().to_vec(),
                    batch_norm: m.bn_states().to_vec(),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("unreadable checkpoint: {e}")))?;
        if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                file.format, file.version
            )));
        }
        let found = file.schema.hash();
        if found != file.schema_hash {
            return Err(Error::SchemaMismatch {
                expected: file.schema_hash,
                found,
            });
        }
        let members = file
            .members
            .into_iter()
            .map(|m| TabNetModel::from_parts(&file.config, file.n_features, m.params, m.batch_norm))
            .collect::<Result<Vec<_>>>()?;
        Self::new(file.schema, Ensemble::new(members)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Fails with a schema mismatch unless `schema` hashes identically to the stored one.
    pub fn check_schema(&self, schema: &Schema) -> Result<()> {
        let (expected, found) = (self.schema.hash(), schema.hash());
        if expected != found {
            return Err(Error::SchemaMismatch { expected, found });
        }
        Ok(())
    }
}
