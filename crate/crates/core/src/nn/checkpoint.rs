//! Checkpoint files.
//!
//! A checkpoint is a JSON document:
//!
//! ```text
//! {
//!   "schema": "daftlab.checkpoint",
//!   "schema_version": 1,
//!   "network": {
//!     "input_dim": 8,
//!     "feature_extractor": [ {"kind": "dense", "weight": {"shape": [..], "data": [..]}, "bias": {..}},
//!                            {"kind": "batch_norm", "channels": .., "gamma": [..], "beta": [..],
//!                             "running_mean": [..], "running_var": [..], "epsilon": .., "momentum": .., "mode": "train"},
//!                            {"kind": "activation", "function": "relu"}, ... ],
//!     "head": [ ... ],
//!     "precision": "f64",
//!     "bn_converted": false,
//!     "seed_lineage": [ {"label": "pretrain", "seed": 123}, ... ]
//!   }
//! }
//! ```
//!
//! Floats are written in shortest round-trip form and parsed with correct
//! rounding, so save/load is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::Network;
use crate::error::{Error, Result};

pub const SCHEMA: &str = "daftlab.checkpoint";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile<N> {
    schema: String,
    schema_version: u32,
    network: N,
}

pub fn to_bytes(net: &Network) -> Result<Vec<u8>> {
    let file = CheckpointFile {
        schema: SCHEMA.to_string(),
        schema_version: SCHEMA_VERSION,
        network: net,
    };
    let mut bytes = serde_json::to_vec_pretty(&file)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Network> {
    let file: CheckpointFile<Network> = serde_json::from_slice(bytes)?;
    if file.schema != SCHEMA {
        return Err(Error::Serde(format!("not a checkpoint: schema {:?}", file.schema)));
    }
    if file.schema_version != SCHEMA_VERSION {
        return Err(Error::Serde(format!(
            "unsupported checkpoint version {}",
            file.schema_version
        )));
    }
    file.network.validate()?;
    Ok(file.network)
}

pub fn save(net: &Network, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, to_bytes(net)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Network> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
