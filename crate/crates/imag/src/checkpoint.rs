//! Named-tensor checkpoints.
//!
//! Layout: the magic `IMAG1`, a little-endian `u32` manifest length, the JSON
//! manifest, then every tensor's values as little-endian `f64` in manifest
//! order. The manifest records the training config, the vocabulary, each
//! tensor's name, shape and byte offset into the payload, and a SHA-256 of
//! the payload.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use imag_core::model::{Model, ModelConfig};
use imag_core::training::TrainConfig;
use imag_core::vocab::Vocabulary;
use imag_core::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"IMAG1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    config: BTreeMap<String, String>,
    vocab: Vec<String>,
    tensors: Vec<TensorEntry>,
    payload_len: u64,
    sha256: String,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub vocab: Vocabulary,
    /// In registration order.
    pub tensors: Vec<(String, Tensor)>,
}

fn digest(payload: &[u8]) -> String {
    format!("{:x}", Sha256::digest(payload))
}

fn shape_str(shape: &[usize]) -> String {
    let dims: Vec<String> = shape.iter().map(ToString::to_string).collect();
    format!("[{}]", dims.join(", "))
}

impl Checkpoint {
    pub fn from_model(config: TrainConfig, model: &Model) -> Self {
        Checkpoint {
            config,
            vocab: model.vocab.clone(),
            tensors: model
                .params
                .iter()
                .map(|(_, p)| (p.name.clone(), p.value.clone()))
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset: payload.len() as u64,
            });
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = Manifest {
            config: config::to_pairs(&self.config).into_iter().collect(),
            vocab: self.vocab.tokens().to_vec(),
            tensors: entries,
            payload_len: payload.len() as u64,
            sha256: digest(&payload),
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(MAGIC.len() + 4 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        out
    }

    /// `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |message: String| Error::Checkpoint {
            path: path.to_path_buf(),
            message,
        };
        if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(bad("not an IMAG1 checkpoint".into()));
        }
        let mut len = [0u8; 4];
        len.copy_from_slice(&bytes[MAGIC.len()..MAGIC.len() + 4]);
        let start = MAGIC.len() + 4;
        let end = start + u32::from_le_bytes(len) as usize;
        if bytes.len() < end {
            return Err(bad("truncated manifest".into()));
        }
        let manifest: Manifest =
            serde_json::from_slice(&bytes[start..end]).map_err(|e| bad(format!("corrupt manifest: {e}")))?;
        let payload = &bytes[end..];
        if payload.len() as u64 != manifest.payload_len {
            return Err(bad(format!(
                "integrity check failed: payload has {} bytes, manifest says {}",
                payload.len(),
                manifest.payload_len
            )));
        }
        if digest(payload) != manifest.sha256 {
            return Err(bad("integrity check failed: payload hash mismatch".into()));
        }
        let config = config::from_pairs(manifest.config.iter().map(|(k, v)| (k.as_str(), v.as_str())))
            .map_err(|e| bad(e.to_string()))?;
        let vocab = Vocabulary::from_tokens(manifest.vocab).map_err(|e| bad(e.to_string()))?;
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for entry in manifest.tensors {
            let n: usize = entry.shape.iter().product();
            let from = entry.offset as usize;
            let to = from + n * 8;
            let raw = payload
                .get(from..to)
                .ok_or_else(|| bad(format!("tensor {} lies outside the payload", entry.name)))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let t = Tensor::new(&entry.shape, data).map_err(|e| bad(format!("tensor {}: {e}", entry.name)))?;
            tensors.push((entry.name, t));
        }
        Ok(Checkpoint { config, vocab, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Builds the model, checking every tensor against `architecture` (the
    /// stored config when `None`). All mismatches are reported at once.
    pub fn into_model(self, architecture: Option<ModelConfig>, path: &Path) -> Result<Model> {
        let arch = architecture.unwrap_or_else(|| self.config.model_config());
        let mut model = Model::new(arch, self.vocab, self.config.seed)?;
        let mut problems = Vec::new();
        for (_, p) in model.params.iter() {
            match self.tensors.iter().find(|(n, _)| n == &p.name) {
                None => problems.push(format!("{} missing", p.name)),
                Some((_, t)) if !t.same_shape(&p.value) => problems.push(format!(
                    "{} has shape {}, architecture expects {}",
                    p.name,
                    shape_str(t.shape()),
                    shape_str(p.value.shape())
                )),
                Some(_) => {}
            }
        }
        for (name, _) in &self.tensors {
            if model.params.id(name).is_none() {
                problems.push(format!("{name} is not part of the architecture"));
            }
        }
        if !problems.is_empty() {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                message: format!("incompatible with the architecture: {}", problems.join("; ")),
            });
        }
        model.load_params(self.tensors)?;
        Ok(model)
    }
}

/// Loads a checkpoint and its model using the stored architecture.
pub fn load_model(path: &Path) -> Result<(TrainConfig, Model)> {
    let ckpt = Checkpoint::load(path)?;
    let config = ckpt.config;
    Ok((config, ckpt.into_model(None, path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use imag_core::model::ModelKind;

    fn small(kind: ModelKind) -> (TrainConfig, Model) {
        let config = TrainConfig {
            e: 4,
            l: 3,
            model_kind: kind,
            seed: 9,
            ..TrainConfig::default()
        };
        let vocab = Vocabulary::from_tokens(
            imag_core::vocab::RESERVED.iter().map(|s| s.to_string()).chain(["a".into(), "b".into()]),
        )
        .unwrap();
        let model = Model::new(config.model_config(), vocab, config.seed).unwrap();
        (config, model)
    }

    #[test]
    fn bytes_round_trip_bitwise() {
        for kind in [ModelKind::Imag, ModelKind::S2s] {
            let (config, model) = small(kind);
            let bytes = Checkpoint::from_model(config, &model).to_bytes();
            assert_eq!(&bytes[..5], MAGIC);
            let back = Checkpoint::from_bytes(&bytes, Path::new("mem")).unwrap();
            assert_eq!(back.config, config);
            assert_eq!(back.to_bytes(), bytes);
            let loaded = back.into_model(None, Path::new("mem")).unwrap();
            for ((_, a), (_, b)) in model.params.iter().zip(loaded.params.iter()) {
                assert_eq!(a.name, b.name);
                let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(&a.value), bits(&b.value));
            }
        }
    }

    #[test]
    fn detects_corruption() {
        let (config, model) = small(ModelKind::Imag);
        let bytes = Checkpoint::from_model(config, &model).to_bytes();
        let p = Path::new("x.ckpt");
        let cut = Checkpoint::from_bytes(&bytes[..bytes.len() - 3], p).unwrap_err();
        assert!(cut.to_string().contains("integrity"), "{cut}");
        let mut flipped = bytes.clone();
        *flipped.last_mut().unwrap() ^= 1;
        assert!(Checkpoint::from_bytes(&flipped, p).unwrap_err().to_string().contains("hash"));
        assert!(Checkpoint::from_bytes(&bytes[..20], p).is_err());
        assert!(Checkpoint::from_bytes(b"IMAG2\0\0\0\0", p).is_err());
    }

    #[test]
    fn wrong_slot_count_names_memory() {
        let (config, model) = small(ModelKind::Imag);
        let ckpt = Checkpoint::from_model(config, &model);
        let arch = ModelConfig { slots: 5, ..config.model_config() };
        let err = ckpt.into_model(Some(arch), Path::new("x.ckpt")).unwrap_err().to_string();
        assert!(err.contains("mem.V has shape [3, 4], architecture expects [5, 4]"), "{err}");
        assert!(err.contains("mem.K"), "{err}");
        assert!(!err.contains("emb "), "{err}");
    }

    #[test]
    fn kind_mismatch_lists_tensors() {
        let (config, model) = small(ModelKind::S2s);
        let ckpt = Checkpoint::from_model(config, &model);
        let arch = ModelConfig { kind: ModelKind::Imag, ..config.model_config() };
        let err = ckpt.into_model(Some(arch), Path::new("x")).unwrap_err().to_string();
        assert!(err.contains("mem.K missing") && err.contains("mem.V missing"), "{err}");
    }
}
