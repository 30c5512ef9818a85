//! Self-describing checkpoint container.
//!
//! Layout: an 8-byte magic, a u32 format version, a u64 header length,
//! a JSON header (model spec, training config, split spec, vocabulary,
//! tensor shapes, payload digest), then the tensor payload — little-
//! endian f64s in canonical layout order. Loads are bit-exact, so a
//! reloaded model reproduces the saved model's outputs exactly.

use crate::metrics::SplitSpec;
use crate::net::{ModelParams, ModelSpec};
use crate::tensor::Tensor;
use crate::train::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"PROCKPT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint format version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

/// Name bindings the model's indices refer to. Stored so an evaluation
/// run can verify its data resolves to the same index space the model
/// was trained in.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Vocab {
    pub nodes: Vec<String>,
    pub relations: Vec<String>,
    /// Class-index → label name for classification tasks; empty for
    /// regression.
    pub classes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub train_config: TrainConfig,
    pub split: SplitSpec,
    pub vocab: Vocab,
    pub epoch: usize,
    pub val_metric: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    train_config: TrainConfig,
    split: SplitSpec,
    vocab: Vocab,
    epoch: usize,
    val_metric: f64,
    config_hash: String,
    payload_sha256: String,
    tensors: Vec<TensorMeta>,
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        for (_, t) in self.params.tensors() {
            for v in t.as_slice() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            spec: self.params.spec.clone(),
            train_config: self.train_config.clone(),
            split: self.split,
            vocab: self.vocab.clone(),
            epoch: self.epoch,
            val_metric: self.val_metric,
            config_hash: self.params.spec.config_hash(),
            payload_sha256: hex_digest(&payload),
            tensors: self
                .params
                .tensors()
                .iter()
                .map(|(name, t)| TensorMeta {
                    name: name.clone(),
                    rows: t.rows(),
                    cols: t.cols(),
                })
                .collect(),
        };
        let header_json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + header_json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_json);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
        let corrupt = |msg: String| CheckpointError::Corrupt(msg);
        if bytes.len() < 20 {
            return Err(CheckpointError::BadMagic);
        }
        if &bytes[..8] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let payload_start = 20usize
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| corrupt("header length exceeds file size".into()))?;
        let header: Header = serde_json::from_slice(&bytes[20..payload_start])
            .map_err(|e| corrupt(format!("unreadable header: {e}")))?;
        if header.config_hash != header.spec.config_hash() {
            return Err(corrupt("config hash does not match the stored spec".into()));
        }
        let payload = &bytes[payload_start..];
        let expected: usize = header.tensors.iter().map(|m| m.rows * m.cols * 8).sum();
        if payload.len() < expected {
            return Err(corrupt(format!(
                "payload truncated: expected {expected} bytes, found {}",
                payload.len()
            )));
        }
        if payload.len() > expected {
            return Err(corrupt(format!(
                "{} trailing bytes after the payload",
                payload.len() - expected
            )));
        }
        if hex_digest(payload) != header.payload_sha256 {
            return Err(corrupt("payload digest mismatch".into()));
        }
        let mut tensors = Vec::with_capacity(header.tensors.len());
        let mut offset = 0;
        for meta in &header.tensors {
            let n = meta.rows * meta.cols;
            let data: Vec<f64> = payload[offset..offset + n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            offset += n * 8;
            if data.iter().any(|v| !v.is_finite()) {
                return Err(corrupt(format!("tensor `{}` contains non-finite values", meta.name)));
            }
            tensors.push((meta.name.clone(), Tensor::from_vec(meta.rows, meta.cols, data)));
        }
        let params = ModelParams::from_tensors(header.spec, tensors).map_err(corrupt)?;
        Ok(Checkpoint {
            params,
            train_config: header.train_config,
            split: header.split,
            vocab: header.vocab,
            epoch: header.epoch,
            val_metric: header.val_metric,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io_err = |source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut file = std::fs::File::create(path).map_err(io_err)?;
        file.write_all(&self.to_bytes()).map_err(io_err)
    }

    pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
        let io_err = |source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .map_err(io_err)?
            .read_to_end(&mut bytes)
            .map_err(io_err)?;
        Checkpoint::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::TimeConfig;
    use crate::gnn::GnnConfig;
    use crate::head::TaskKind;

    fn sample_checkpoint() -> Checkpoint {
        let spec = ModelSpec {
            dim: 5,
            gnn: GnnConfig { layers: 2, ..GnnConfig::default() },
            time: TimeConfig::default(),
            task: TaskKind::Multiclass(3),
            bias: true,
            allow_empty: false,
            node_count: 7,
            relation_count: 2,
        };
        Checkpoint {
            params: ModelParams::init(spec, 99),
            train_config: TrainConfig::default(),
            split: SplitSpec::default(),
            vocab: Vocab {
                nodes: (0..7).map(|i| format!("n{i}")).collect(),
                relations: vec!["r0".into(), "r1".into()],
                classes: vec!["a".into(), "b".into(), "c".into()],
            },
            epoch: 17,
            val_metric: 0.875,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ckpt = sample_checkpoint();
        let loaded = Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap();
        assert_eq!(loaded.epoch, 17);
        assert_eq!(loaded.val_metric, 0.875);
        assert_eq!(loaded.vocab, ckpt.vocab);
        assert_eq!(loaded.split, ckpt.split);
        assert_eq!(loaded.train_config, ckpt.train_config);
        assert_eq!(loaded.params.spec, ckpt.params.spec);
        for ((na, ta), (nb, tb)) in ckpt.params.tensors().iter().zip(loaded.params.tensors()) {
            assert_eq!(na, nb);
            let bits_match = ta
                .as_slice()
                .iter()
                .zip(tb.as_slice())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(bits_match, "tensor {na} changed across the round trip");
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ckpt = sample_checkpoint();
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.params.tensors(), ckpt.params.tensors());
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let mut bytes = sample_checkpoint().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(CheckpointError::BadMagic)));
        let mut bytes = sample_checkpoint().to_bytes();
        bytes[8] = 9;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(CheckpointError::UnsupportedVersion(9))
        ));
    }

    #[test]
    fn rejects_truncation_trailing_and_tampering() {
        let good = sample_checkpoint().to_bytes();
        let err = Checkpoint::from_bytes(&good[..good.len() - 4]).unwrap_err();
        assert!(err.to_string().contains("truncated"));

        let mut trailing = good.clone();
        trailing.extend_from_slice(&[0u8; 3]);
        let err = Checkpoint::from_bytes(&trailing).unwrap_err();
        assert!(err.to_string().contains("trailing"));

        let mut tampered = good.clone();
        let last = tampered.len() - 1;
        tampered[last] ^= 0x01;
        let err = Checkpoint::from_bytes(&tampered).unwrap_err();
        assert!(err.to_string().contains("digest"), "{err}");
    }

    #[test]
    fn rejects_non_finite_payload() {
        let mut ckpt = sample_checkpoint();
        ckpt.params.tensors_mut()[0].1.set(0, 0, f64::NAN);
        let err = Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap_err();
        assert!(err.to_string().contains("non-finite"), "{err}");
    }
}
