//! Versioned binary container for trained models.
//!
//! Layout: `KANCDCKP` magic, format version (`u32` LE), manifest length
//! (`u64` LE), JSON manifest, tensor payload as little-endian `f64`, and a
//! SHA-256 digest of everything before it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cdm::{DiagnosisModel, ModelConfig};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"KANCDCKP";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

/// Run information stored next to the parameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub student_ids: Vec<String>,
    pub exercise_ids: Vec<String>,
    pub concept_ids: Vec<String>,
    pub train_seed: Option<u64>,
    pub split_seed: Option<u64>,
    pub split_ratio: Option<f64>,
    pub source: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    config: ModelConfig,
    trained_epochs: usize,
    q: Vec<Vec<u8>>,
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

fn bad(detail: impl Into<String>) -> Error {
    Error::Checkpoint(detail.into())
}

/// Serializes a model and its metadata.
pub fn to_bytes(model: &DiagnosisModel, meta: &CheckpointMeta) -> Vec<u8> {
    let params = model.params();
    let mut tensors = Vec::with_capacity(params.len());
    let mut payload = Vec::new();
    let mut offset = 0;
    for (name, t) in &params {
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.numel();
        for v in t.values() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let q_shape = model.q().shape();
    let q = (0..q_shape[0])
        .map(|r| model.q().row(r).iter().map(|v| *v as u8).collect())
        .collect();
    let manifest = Manifest {
        version: VERSION,
        config: model.config().clone(),
        trained_epochs: model.trained_epochs(),
        q,
        meta: meta.clone(),
        tensors,
    };
    let text = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::with_capacity(20 + text.len() + payload.len() + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(&text);
    out.extend_from_slice(&payload);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

/// Rebuilds a model from [`to_bytes`] output, checking magic, version,
/// digest, tensor names and shapes.
pub fn from_bytes(bytes: &[u8]) -> Result<(DiagnosisModel, CheckpointMeta)> {
    if bytes.len() < 20 + DIGEST_LEN || &bytes[..8] != MAGIC {
        return Err(bad("not a kancd checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(format!(
            "unsupported format version {version} (expected {VERSION})"
        )));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("digest mismatch (file is corrupted or truncated)"));
    }
    let len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
    let text = body
        .get(20..20 + len)
        .ok_or_else(|| bad("manifest length exceeds file size"))?;
    let manifest: Manifest =
        serde_json::from_slice(text).map_err(|e| bad(format!("manifest does not parse: {e}")))?;
    let payload = &body[20 + len..];
    if payload.len() % 8 != 0 {
        return Err(bad("payload is not a whole number of f64 values"));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();

    let mut model = DiagnosisModel::new(manifest.config, &manifest.q)?;
    {
        let mut params = model.params_mut();
        if params.len() != manifest.tensors.len() {
            return Err(bad(format!(
                "checkpoint holds {} tensors, model expects {}",
                manifest.tensors.len(),
                params.len()
            )));
        }
        for ((name, t), entry) in params.iter_mut().zip(&manifest.tensors) {
            if *name != entry.name || t.shape() != entry.shape.as_slice() {
                return Err(bad(format!(
                    "tensor '{}' {:?} does not match expected '{name}' {:?}",
                    entry.name,
                    entry.shape,
                    t.shape()
                )));
            }
            let src = values
                .get(entry.offset..entry.offset + t.numel())
                .ok_or_else(|| bad(format!("tensor '{name}' runs past the payload")))?;
            t.assign(src)?;
        }
    }
    model.set_trained_epochs(manifest.trained_epochs);
    Ok((model, manifest.meta))
}

pub fn save(model: &DiagnosisModel, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model, meta)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(DiagnosisModel, CheckpointMeta)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Hex SHA-256 of a byte string (used for checkpoint file digests).
pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cdm::Variant;

    fn model(v: Variant) -> DiagnosisModel {
        let mut cfg = ModelConfig::new(v, 4, 3, 2);
        cfg.ncd_hidden = vec![4, 3];
        cfg.seed = 5;
        DiagnosisModel::new(cfg, &[vec![1, 0], vec![0, 1], vec![1, 1]]).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for v in Variant::ALL {
            let m = model(v);
            let bytes = to_bytes(&m, &CheckpointMeta::default());
            let (back, _) = from_bytes(&bytes).unwrap();
            let (s, e) = ([0, 1, 2, 3], [2, 0, 1, 2]);
            assert_eq!(
                m.predict(&s, &e).unwrap(),
                back.predict(&s, &e).unwrap(),
                "{v}"
            );
            assert_eq!(to_bytes(&back, &CheckpointMeta::default()), bytes);
        }
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = to_bytes(&model(Variant::Irt), &CheckpointMeta::default());
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(matches!(from_bytes(&bytes), Err(Error::Checkpoint(_))));
        assert!(matches!(from_bytes(b"garbage"), Err(Error::Checkpoint(_))));
        let mut v2 = to_bytes(&model(Variant::Irt), &CheckpointMeta::default());
        v2[8] = 9;
        assert!(from_bytes(&v2).unwrap_err().to_string().contains("version"));
    }
}
