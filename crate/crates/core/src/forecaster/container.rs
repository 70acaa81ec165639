//! Versioned model container: magic string `FQS1`, a little-endian u32
//! format version, then a JSON payload.
//!
//! JSON floats are printed shortest-round-trip, so load(save(m)) reproduces
//! the parameters bit for bit, and serialization of equal models is
//! byte-identical.

use std::io::{Read, Write};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::net::{Dims, Params};
use super::{EpochStats, ModelConfig, ModelError, ModelState};
use crate::timeseries::NormStats;

const MAGIC: &[u8; 4] = b"FQS1";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Payload {
    config: ModelConfig,
    stats: NormStats,
    parameters: Vec<f64>,
    training_log: Vec<EpochStats>,
    train_range: Option<(DateTime<Utc>, DateTime<Utc>)>,
}

pub(super) fn save(model: &ModelState, mut writer: impl Write) -> Result<(), ModelError> {
    writer.write_all(MAGIC)?;
    writer.write_all(&VERSION.to_le_bytes())?;
    let payload = Payload {
        config: model.config().clone(),
        stats: model.stats().clone(),
        parameters: model.parameters(),
        training_log: model.training_log().to_vec(),
        train_range: model.train_range(),
    };
    serde_json::to_writer(&mut writer, &payload)
        .map_err(|e| ModelError::Corrupt(e.to_string()))?;
    Ok(())
}

pub(super) fn load(mut reader: impl Read) -> Result<ModelState, ModelError> {
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic).map_err(|_| ModelError::BadMagic)?;
    if &magic != MAGIC {
        return Err(ModelError::BadMagic);
    }
    let mut version = [0u8; 4];
    reader
        .read_exact(&mut version)
        .map_err(|_| ModelError::Corrupt("truncated version field".into()))?;
    let version = u32::from_le_bytes(version);
    if version != VERSION {
        return Err(ModelError::UnsupportedVersion(version));
    }

    let payload: Payload =
        serde_json::from_reader(reader).map_err(|e| ModelError::Corrupt(e.to_string()))?;
    payload.config.validate()?;
    let dims = Dims::from_config(&payload.config);
    let params = Params::from_flat(&dims, &payload.parameters).ok_or_else(|| {
        ModelError::Corrupt(format!(
            "parameter vector length {} does not match the config",
            payload.parameters.len()
        ))
    })?;
    if payload.parameters.iter().any(|p| !p.is_finite()) {
        return Err(ModelError::Corrupt("non-finite parameter".into()));
    }
    Ok(ModelState::from_parts(
        payload.config,
        payload.stats,
        params,
        payload.training_log,
        payload.train_range,
    ))
}
