//! Checkpoint layout: a `manifest.json` plus one tensor file per parameter.
//!
//! The manifest records the detector config, the training step, the
//! experiment hash, the parameter names, and the (small) running-statistic
//! buffers inline. Each parameter lives in its own `<name>.mdt` file next to
//! the manifest, so checkpoints stay diffable and individual tensors can be
//! inspected with the standalone tensor tooling.
//!
//! Loading is name-driven: every parameter and buffer of the receiving store
//! must be present with matching shape, while extra entries in the checkpoint
//! are ignored. That asymmetry lets an eval-only run restore just the
//! detector out of a checkpoint that also carries discriminator and
//! self-supervision weights.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{read_mdt_bytes, write_mdt_bytes, Scalar};

use super::network::FusionDetectorConfig;
use super::params::ParamStore;

const MANIFEST_FORMAT: u32 = 1;
const MANIFEST_NAME: &str = "manifest.json";

/// Everything about a checkpoint except the parameter tensors themselves.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: u32,
    pub config: FusionDetectorConfig,
    pub step: u64,
    /// Hash of the experiment config that produced this checkpoint, when run
    /// under the full pipeline.
    pub experiment_hash: Option<String>,
    pub params: Vec<String>,
    pub buffers: BTreeMap<String, Vec<f32>>,
}

/// Write `store` to `dir` (created if needed).
pub fn save_checkpoint<S: Scalar>(
    dir: &Path,
    store: &ParamStore<S>,
    config: &FusionDetectorConfig,
    step: u64,
    experiment_hash: Option<&str>,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut params = Vec::new();
    for (name, tensor) in store.params() {
        let bytes = write_mdt_bytes(tensor.shape(), &tensor.to_f32_vec())?;
        let path = dir.join(format!("{name}.mdt"));
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        params.push(name.to_string());
    }
    let buffers = store
        .buffers()
        .map(|(name, cell)| (name.to_string(), cell.borrow().iter().map(|v| v.to_f32c()).collect()))
        .collect();
    let manifest = CheckpointManifest {
        format: MANIFEST_FORMAT,
        config: config.clone(),
        step,
        experiment_hash: experiment_hash.map(str::to_string),
        params,
        buffers,
    };
    let path = dir.join(MANIFEST_NAME);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Malformed {
        what: "checkpoint manifest",
        path: path.clone(),
        detail: e.to_string(),
    })?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

/// Read just the manifest.
pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&path).map_err(|_| Error::MissingInput(format!("checkpoint manifest {}", path.display())))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text).map_err(|e| Error::Malformed {
        what: "checkpoint manifest",
        path: path.clone(),
        detail: e.to_string(),
    })?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(Error::Malformed {
            what: "checkpoint manifest",
            path,
            detail: format!("format {} unsupported (expected {MANIFEST_FORMAT})", manifest.format),
        });
    }
    Ok(manifest)
}

/// Restore every parameter and buffer of `store` from the checkpoint at
/// `dir`, returning its manifest. Entries the store does not declare are
/// skipped.
pub fn load_into<S: Scalar>(dir: &Path, store: &ParamStore<S>) -> Result<CheckpointManifest> {
    let manifest = read_manifest(dir)?;
    for (name, tensor) in store.params() {
        if !manifest.params.iter().any(|p| p == name) {
            return Err(Error::MissingInput(format!("checkpoint {} has no parameter `{name}`", dir.display())));
        }
        let path = dir.join(format!("{name}.mdt"));
        let bytes = fs::read(&path).map_err(|_| Error::MissingInput(format!("checkpoint tensor {}", path.display())))?;
        let (dims, values) = read_mdt_bytes(&bytes, &path)?;
        if dims != tensor.shape() {
            return Err(Error::shape(
                "checkpoint",
                format!("`{name}` is {dims:?} on disk but {:?} in the model", tensor.shape()),
            ));
        }
        let cast: Vec<S> = values.iter().map(|&v| S::from_f32c(v)).collect();
        store.set_param_data(name, &cast)?;
    }
    for (name, cell) in store.buffers() {
        let stored = manifest
            .buffers
            .get(name)
            .ok_or_else(|| Error::MissingInput(format!("checkpoint {} has no buffer `{name}`", dir.display())))?;
        let mut dst = cell.borrow_mut();
        if stored.len() != dst.len() {
            return Err(Error::shape(
                "checkpoint",
                format!("buffer `{name}` has {} values on disk but {} in the model", stored.len(), dst.len()),
            ));
        }
        for (d, &s) in dst.iter_mut().zip(stored) {
            *d = S::from_f32c(s);
        }
    }
    Ok(manifest)
}
