//! Checkpoint file: 8-byte magic, format version (u32 LE), header length
//! (u64 LE), a JSON header with the configuration, metadata and parameter
//! table, then every parameter as little-endian `f64` in table order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::EncoderConfig;
use super::model::SetEncoder;
use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::metrics::MetricMeans;
use crate::numeric::Tensor;

const MAGIC: &[u8; 8] = b"CACTUSKT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Training provenance stored next to the weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckpointMeta {
    /// Finetuning epoch the weights come from (1-based); `None` if never finetuned.
    pub epoch: Option<usize>,
    /// Agglomerative threshold chosen on validation data.
    pub threshold: Option<f64>,
    pub validation: Option<MetricMeans>,
    pub validation_score: Option<f64>,
    pub loss: Option<LossKind>,
    pub pretrain_batches: usize,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: EncoderConfig,
    metadata: CheckpointMeta,
    params: Vec<ParamEntry>,
}

/// Encoder weights with their configuration and training metadata.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub encoder: SetEncoder,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn new(encoder: SetEncoder) -> Self {
        Self {
            encoder,
            meta: CheckpointMeta::default(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let params = self.encoder.params();
        let header = Header {
            config: self.encoder.config().clone(),
            metadata: self.meta.clone(),
            params: params
                .iter()
                .map(|(id, name, t)| ParamEntry {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    trainable: params.is_trainable(id),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + 8 * params.numel());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, t) in params.iter() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        let mut encoder = SetEncoder::new(header.config)?;

        let expected: Vec<(String, Vec<usize>)> = encoder
            .params()
            .iter()
            .map(|(_, n, t)| (n.to_string(), t.shape().to_vec()))
            .collect();
        let found: Vec<(String, Vec<usize>)> = header
            .params
            .iter()
            .map(|p| (p.name.clone(), p.shape.clone()))
            .collect();
        if expected != found {
            return Err(bad("parameter table does not match the configuration"));
        }
        let mut data = &bytes[20 + hlen..];
        let ids: Vec<_> = encoder.params().ids().collect();
        for (id, entry) in ids.into_iter().zip(&header.params) {
            let n: usize = entry.shape.iter().product();
            if data.len() < 8 * n {
                return Err(bad("truncated parameter data"));
            }
            let values: Vec<f64> = data[..8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            data = &data[8 * n..];
            let params = encoder.params_mut();
            *params.value_mut(id) = Tensor::new(entry.shape.clone(), values)?;
            params.set_trainable(id, entry.trainable);
        }
        if !data.is_empty() {
            return Err(bad("trailing bytes after parameter data"));
        }
        Ok(Self {
            encoder,
            meta: header.metadata,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
