//! Binary checkpoint container shared by every model family.
//!
//! Layout (little endian):
//!
//! ```text
//! magic     4 bytes  "KRCK"
//! version   u32      FORMAT_VERSION
//! hdr_len   u32      length of the JSON header
//! header    hdr_len  JSON: family, vocab, vocab_hash, spec, tensor_lens, meta
//! tensors   f64 * Σ tensor_lens, in the family's fixed tensor order
//! ```

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::bi_encoder::{BiEncoderModel, Objective, SoftmaxHead};
use crate::cross_encoder::{CrossEncoderConfig, CrossEncoderModel};
use crate::error::{Error, Result};
use crate::jaccard::JaccardConfig;
use crate::text::Vocab;

pub const MAGIC: &[u8; 4] = b"KRCK";
pub const FORMAT_VERSION: u32 = 1;

/// A trained relevance model of any family.
#[derive(Debug, Clone, PartialEq)]
pub enum RelevanceModel {
    Jaccard(JaccardConfig),
    Bi(BiEncoderModel),
    Cross(CrossEncoderModel),
}

impl RelevanceModel {
    pub fn threshold(&self) -> f64 {
        match self {
            RelevanceModel::Jaccard(c) => c.threshold,
            RelevanceModel::Bi(m) => m.threshold,
            RelevanceModel::Cross(m) => m.threshold,
        }
    }

    fn tensors(&self) -> Vec<&[f64]> {
        match self {
            RelevanceModel::Jaccard(_) => Vec::new(),
            RelevanceModel::Bi(m) => {
                let mut out = vec![m.embeddings.as_slice().expect("standard layout")];
                if let Some(h) = &m.head {
                    out.push(h.weight.as_slice().expect("standard layout"));
                    out.push(h.bias.as_slice().expect("standard layout"));
                }
                out
            }
            RelevanceModel::Cross(m) => m.params.slices(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Spec {
    Jaccard {
        config: JaccardConfig,
    },
    Bi {
        dim: usize,
        objective: Objective,
        vocab_size: usize,
        threshold: f64,
        seed: u64,
    },
    Cross {
        config: CrossEncoderConfig,
        threshold: f64,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    family: String,
    vocab_hash: String,
    vocab: Vocab,
    spec: Spec,
    tensor_lens: Vec<usize>,
    #[serde(default)]
    meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Model family name, e.g. `jaccard`, `bi-contrastive`, `cross-tiny`.
    pub family: String,
    pub vocab: Vocab,
    pub model: RelevanceModel,
    /// Free-form training provenance (configs, seeds, loss trace).
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn new(family: impl Into<String>, vocab: Vocab, model: RelevanceModel, meta: serde_json::Value) -> Result<Self> {
        let ck = Self {
            family: family.into(),
            vocab,
            model,
            meta,
        };
        ck.check_vocab_size()?;
        Ok(ck)
    }

    fn check_vocab_size(&self) -> Result<()> {
        let n = match &self.model {
            RelevanceModel::Jaccard(_) => return Ok(()),
            RelevanceModel::Bi(m) => m.vocab_size(),
            RelevanceModel::Cross(m) => m.config.vocab_size,
        };
        if n != self.vocab.len() {
            return Err(Error::Checkpoint(format!(
                "model vocab size {n} does not match vocabulary of {}",
                self.vocab.len()
            )));
        }
        Ok(())
    }

    fn spec(&self) -> Spec {
        match &self.model {
            RelevanceModel::Jaccard(c) => Spec::Jaccard { config: *c },
            RelevanceModel::Bi(m) => Spec::Bi {
                dim: m.dim,
                objective: m.objective,
                vocab_size: m.vocab_size(),
                threshold: m.threshold,
                seed: m.seed,
            },
            RelevanceModel::Cross(m) => Spec::Cross {
                config: m.config.clone(),
                threshold: m.threshold,
            },
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let tensors = self.model.tensors();
        let header = Header {
            family: self.family.clone(),
            vocab_hash: self.vocab.hash(),
            vocab: self.vocab.clone(),
            spec: self.spec(),
            tensor_lens: tensors.iter().map(|t| t.len()).collect(),
            meta: self.meta.clone(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let n: usize = tensors.iter().map(|t| t.len()).sum();
        let mut out = Vec::with_capacity(12 + header.len() + 8 * n);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for t in tensors {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let hdr_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = bytes.get(12..12 + hdr_len).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        if header.vocab.hash() != header.vocab_hash {
            return Err(bad("vocabulary hash mismatch"));
        }
        let data = &bytes[12 + hdr_len..];
        let total: usize = header.tensor_lens.iter().sum();
        if data.len() != 8 * total {
            return Err(Error::Checkpoint(format!(
                "expected {} tensor bytes, found {}",
                8 * total,
                data.len()
            )));
        }
        let floats: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut tensors = Vec::with_capacity(header.tensor_lens.len());
        let mut off = 0;
        for &len in &header.tensor_lens {
            tensors.push(floats[off..off + len].to_vec());
            off += len;
        }
        let model = build_model(header.spec, tensors)?;
        let ck = Self {
            family: header.family,
            vocab: header.vocab,
            model,
            meta: header.meta,
        };
        ck.check_vocab_size()?;
        Ok(ck)
    }

    /// Content fingerprint: first 16 hex digits of the SHA-256 of the
    /// serialized checkpoint, metadata excluded.
    pub fn model_version(&self) -> String {
        let stripped = Self {
            meta: serde_json::Value::Null,
            ..self.clone()
        };
        crate::io::sha256_hex(&stripped.to_bytes())[..16].to_string()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Loads and checks the checkpoint was trained on `vocab`.
    pub fn load_for_vocab(path: &Path, vocab: &Vocab) -> Result<Self> {
        let ck = Self::load(path)?;
        if ck.vocab.hash() != vocab.hash() {
            return Err(Error::Checkpoint(format!(
                "{}: trained on a different vocabulary",
                path.display()
            )));
        }
        Ok(ck)
    }
}

fn build_model(spec: Spec, mut tensors: Vec<Vec<f64>>) -> Result<RelevanceModel> {
    let shape_err = |e: ndarray::ShapeError| Error::Checkpoint(format!("tensor shape: {e}"));
    match spec {
        Spec::Jaccard { config } => {
            config.validate()?;
            if !tensors.is_empty() {
                return Err(Error::Checkpoint("jaccard checkpoint carries tensors".into()));
            }
            Ok(RelevanceModel::Jaccard(config))
        }
        Spec::Bi {
            dim,
            objective,
            vocab_size,
            threshold,
            seed,
        } => {
            let expect = if objective == Objective::Softmax { 3 } else { 1 };
            if tensors.len() != expect {
                return Err(Error::Checkpoint(format!(
                    "bi-encoder expects {expect} tensors, found {}",
                    tensors.len()
                )));
            }
            let head = if objective == Objective::Softmax {
                let bias = tensors.pop().unwrap();
                let weight = tensors.pop().unwrap();
                Some(SoftmaxHead {
                    weight: Array2::from_shape_vec((3 * dim, 2), weight).map_err(shape_err)?,
                    bias: Array1::from_shape_vec(2, bias).map_err(shape_err)?,
                })
            } else {
                None
            };
            let embeddings = Array2::from_shape_vec((vocab_size, dim), tensors.pop().unwrap()).map_err(shape_err)?;
            Ok(RelevanceModel::Bi(BiEncoderModel {
                dim,
                objective,
                embeddings,
                head,
                threshold,
                seed,
            }))
        }
        Spec::Cross { config, threshold } => {
            let mut model = CrossEncoderModel::new(config)?;
            model.threshold = threshold;
            let mut slots = model.params.slices_mut();
            if slots.len() != tensors.len() {
                return Err(Error::Checkpoint(format!(
                    "cross-encoder expects {} tensors, found {}",
                    slots.len(),
                    tensors.len()
                )));
            }
            for (slot, t) in slots.iter_mut().zip(&tensors) {
                if slot.len() != t.len() {
                    return Err(Error::Checkpoint("cross-encoder tensor length mismatch".into()));
                }
                slot.copy_from_slice(t);
            }
            Ok(RelevanceModel::Cross(model))
        }
    }
}
