//! Binary checkpoint format.
//!
//! ```text
//! "VXPT" | u32 version | u32 metadata length | metadata JSON
//! repeated: u16 name length | name | u8 rank | u32 extents... | f32 data
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{param_specs, ModelError, UNetConfig, UNetModel};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VXPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0} (expected {CHECKPOINT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("checkpoint metadata: {0}")]
    Metadata(String),
    #[error("parameter #{index}: expected {expected:?}, found {found:?}")]
    NameMismatch {
        index: usize,
        expected: Option<String>,
        found: Option<String>,
    },
    #[error("parameter {name}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint config does not match: {0}")]
    ConfigMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CheckpointError {
    pub fn code(&self) -> &'static str {
        match self {
            CheckpointError::BadMagic(_) => "checkpoint.bad_magic",
            CheckpointError::UnsupportedVersion(_) => "checkpoint.version",
            CheckpointError::Truncated(_) => "checkpoint.truncated",
            CheckpointError::Metadata(_) => "checkpoint.metadata",
            CheckpointError::NameMismatch { .. } => "checkpoint.name_mismatch",
            CheckpointError::ShapeMismatch { .. } => "checkpoint.shape_mismatch",
            CheckpointError::ConfigMismatch(_) => "checkpoint.config_mismatch",
            CheckpointError::Model(_) => "checkpoint.model",
            CheckpointError::Io { .. } => "checkpoint.io",
        }
    }
}

/// Training provenance stored alongside the parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub config: UNetConfig,
    pub epoch: usize,
    pub fold: usize,
    pub val_loss: f64,
    pub seed: u64,
}

pub fn encode_checkpoint(model: &UNetModel<f32>, meta: &CheckpointMeta) -> Result<Vec<u8>, CheckpointError> {
    if meta.config != *model.config() {
        return Err(CheckpointError::ConfigMismatch(
            "metadata config differs from the model's config".into(),
        ));
    }
    let json = serde_json::to_vec(meta).map_err(|e| CheckpointError::Metadata(e.to_string()))?;
    let mut out = Vec::with_capacity(12 + json.len() + 4 * model.parameter_count() + 64 * model.params().len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in model.params() {
        out.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.value.rank() as u8);
        for &e in p.value.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CheckpointError::Truncated(what))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

struct Record {
    name: String,
    shape: Vec<usize>,
    data: Vec<f32>,
}

fn read_record(r: &mut Reader) -> Result<Record, CheckpointError> {
    let len = u16::from_le_bytes(r.take(2, "record name length")?.try_into().unwrap()) as usize;
    let name = String::from_utf8(r.take(len, "record name")?.to_vec())
        .map_err(|e| CheckpointError::Metadata(format!("parameter name is not UTF-8: {e}")))?;
    let rank = r.take(1, "record rank")?[0] as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.u32("record extents")? as usize);
    }
    let count = shape
        .iter()
        .try_fold(1usize, |a, &e| a.checked_mul(e))
        .and_then(|c| c.checked_mul(4))
        .ok_or(CheckpointError::Truncated("record data"))?;
    let data = r
        .take(count, "record data")?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Record { name, shape, data })
}

/// Parses a checkpoint and checks its records against `expected` (or the
/// config stored in the metadata when `None`).
pub fn decode_checkpoint(
    bytes: &[u8],
    expected: Option<&UNetConfig>,
) -> Result<(UNetModel<f32>, CheckpointMeta), CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if &magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let meta_len = r.u32("metadata length")? as usize;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len, "metadata")?)
        .map_err(|e| CheckpointError::Metadata(e.to_string()))?;
    let config = expected.copied().unwrap_or(meta.config);

    let specs = param_specs(&config);
    let mut tensors = Vec::with_capacity(specs.len());
    for (index, (name, shape)) in specs.into_iter().enumerate() {
        if r.done() {
            return Err(CheckpointError::NameMismatch {
                index,
                expected: Some(name),
                found: None,
            });
        }
        let rec = read_record(&mut r)?;
        if rec.name != name {
            return Err(CheckpointError::NameMismatch {
                index,
                expected: Some(name),
                found: Some(rec.name),
            });
        }
        if rec.shape != shape {
            return Err(CheckpointError::ShapeMismatch {
                name,
                expected: shape,
                found: rec.shape,
            });
        }
        tensors.push(Tensor::new(rec.shape, rec.data).expect("record length checked"));
    }
    if !r.done() {
        let index = tensors.len();
        let rec = read_record(&mut r)?;
        return Err(CheckpointError::NameMismatch {
            index,
            expected: None,
            found: Some(rec.name),
        });
    }
    if meta.config != config {
        return Err(CheckpointError::ConfigMismatch(format!(
            "file records {:?}, caller expects {:?}",
            meta.config, config
        )));
    }
    let mut model = UNetModel::zeroed(config)?;
    model.set_tensors(tensors)?;
    Ok((model, meta))
}

pub fn save_checkpoint(
    model: &UNetModel<f32>,
    meta: &CheckpointMeta,
    path: impl AsRef<Path>,
) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(model, meta)?;
    fs::write(path, bytes).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>, CheckpointError> {
    fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Loads a checkpoint using the config recorded in its metadata.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(UNetModel<f32>, CheckpointMeta), CheckpointError> {
    decode_checkpoint(&read_file(path.as_ref())?, None)
}

/// Loads a checkpoint that must match `config`.
pub fn load_checkpoint_for(
    path: impl AsRef<Path>,
    config: &UNetConfig,
) -> Result<(UNetModel<f32>, CheckpointMeta), CheckpointError> {
    decode_checkpoint(&read_file(path.as_ref())?, Some(config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn sample(base: usize) -> (UNetModel<f32>, CheckpointMeta) {
        let config = UNetConfig::with_base(base);
        let model = UNetModel::build(config, &mut seeded(3)).unwrap();
        let meta = CheckpointMeta {
            config,
            epoch: 17,
            fold: 2,
            val_loss: 0.125,
            seed: 99,
        };
        (model, meta)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (model, meta) = sample(2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.vxpt");
        save_checkpoint(&model, &meta, &path).unwrap();
        let (back, back_meta) = load_checkpoint(&path).unwrap();
        assert_eq!(back_meta, meta);
        for (a, b) in model.params().iter().zip(back.params()) {
            assert_eq!(a.name, b.name);
            let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.value), bits(&b.value));
        }
    }

    #[test]
    fn corrupt_magic_and_version() {
        let (model, meta) = sample(1);
        let mut bytes = encode_checkpoint(&model, &meta).unwrap();
        bytes[0] = b'X';
        assert_eq!(decode_checkpoint(&bytes, None).unwrap_err().code(), "checkpoint.bad_magic");
        let mut bytes = encode_checkpoint(&model, &meta).unwrap();
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert_eq!(decode_checkpoint(&bytes, None).unwrap_err().code(), "checkpoint.version");
    }

    #[test]
    fn truncation_detected() {
        let (model, meta) = sample(1);
        let bytes = encode_checkpoint(&model, &meta).unwrap();
        for cut in [2, 10, 40, bytes.len() - 1] {
            let err = decode_checkpoint(&bytes[..cut], None).unwrap_err();
            assert!(
                matches!(err.code(), "checkpoint.truncated" | "checkpoint.metadata"),
                "cut {cut}: {err}"
            );
        }
        assert_eq!(decode_checkpoint(&bytes[..bytes.len() - 1], None).unwrap_err().code(), "checkpoint.truncated");
    }

    #[test]
    fn smaller_model_against_larger_config_is_shape_mismatch() {
        let (model, meta) = sample(8);
        let bytes = encode_checkpoint(&model, &meta).unwrap();
        let err = decode_checkpoint(&bytes, Some(&UNetConfig::with_base(32))).unwrap_err();
        assert_eq!(err.code(), "checkpoint.shape_mismatch");
    }

    #[test]
    fn renamed_record_is_name_mismatch() {
        let (model, meta) = sample(1);
        let mut bytes = encode_checkpoint(&model, &meta).unwrap();
        let json_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        // first record name starts after its u16 length
        let at = 12 + json_len + 2;
        bytes[at] = b'x';
        assert_eq!(decode_checkpoint(&bytes, None).unwrap_err().code(), "checkpoint.name_mismatch");
    }
}
