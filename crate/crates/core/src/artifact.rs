//! On-disk artifacts (model, index, calibration) and their content-hash
//! cross-checks.
//!
//! Each artifact is a separate JSON document. The index records the SHA-256
//! of the model file it was built from, and the calibration records the
//! hashes of both, so a monitor cannot be assembled from mismatched parts.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::icp::{CalibrationHashes, CalibrationScores};
use crate::index::EmbeddingIndex;
use crate::neural::MlpModel;
use crate::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn file_sha256(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub model: MlpModel,
    pub sha256: String,
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LoadedModel> {
    let text = read(path.as_ref())?;
    Ok(LoadedModel {
        model: MlpModel::from_json(&text)?,
        sha256: sha256_hex(text.as_bytes()),
    })
}

#[derive(Debug, Clone)]
pub struct LoadedIndex {
    pub index: EmbeddingIndex,
    pub sha256: String,
}

/// Loads an index and checks it was built from `model`.
pub fn load_index(path: impl AsRef<Path>, model: &LoadedModel) -> Result<LoadedIndex> {
    let text = read(path.as_ref())?;
    let (index, model_sha) = EmbeddingIndex::from_json(&text)?;
    if model_sha != model.sha256 {
        return Err(Error::Artifact(format!(
            "index {} was built from a different model (expected model sha256 {}, found {})",
            path.as_ref().display(),
            model_sha,
            model.sha256
        )));
    }
    if index.dim() != model.model.embedding_dim()? {
        return Err(Error::Artifact("index width does not match the model embedding".into()));
    }
    Ok(LoadedIndex {
        index,
        sha256: sha256_hex(text.as_bytes()),
    })
}

/// Loads a calibration and checks it matches both `model` and `index`.
pub fn load_calibration(path: impl AsRef<Path>, model: &LoadedModel, index: &LoadedIndex) -> Result<CalibrationScores> {
    let text = read(path.as_ref())?;
    let (cal, hashes) = CalibrationScores::from_json(&text)?;
    let expected = CalibrationHashes {
        model_sha256: model.sha256.clone(),
        index_sha256: index.sha256.clone(),
    };
    if hashes != expected {
        return Err(Error::Artifact(format!(
            "calibration {} does not match the supplied model and index",
            path.as_ref().display()
        )));
    }
    Ok(cal)
}
