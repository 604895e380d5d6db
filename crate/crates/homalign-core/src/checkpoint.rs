//! Versioned binary container for named parameter tensors.
//!
//! Byte layout (all integers little-endian; full description in
//! `docs/formats.md`):
//!
//! ```text
//! magic     8 bytes  b"HOMALIGN"
//! version   u32      currently 1
//! meta_len  u32      followed by meta_len bytes of UTF-8 `key=value` lines
//! count     u32      number of parameter records
//! record:
//!   name_len u32     followed by the UTF-8 name
//!   ndim     u32     followed by ndim × u64 extents
//!   data     numel × f64 (little-endian), row-major
//! ```
//!
//! Values are always stored at 64-bit precision regardless of the runtime
//! element type; the runtime precision is recorded in the metadata. Model
//! metadata (variant, feature channels, block counts, input size) rides in
//! the header's key=value block so a checkpoint is self-describing.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::element::Element;
use crate::models::{ModelConfig, ModelError, ModelParams, Variant};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"HOMALIGN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("bad magic: not a checkpoint file")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated container (needed {needed} more bytes)")]
    Truncated { needed: usize },
    #[error("invalid UTF-8 in {what}")]
    Utf8 { what: &'static str },
    #[error("missing metadata key {0}")]
    MissingMeta(&'static str),
    #[error("invalid metadata value for {key}: {value}")]
    BadMeta { key: &'static str, value: String },
    #[error("checkpoint holds no parameter named {0}")]
    UnknownParam(String),
    #[error("parameter {name}: checkpoint shape {got:?} does not match model shape {want:?}")]
    ShapeMismatch { name: String, got: Vec<usize>, want: Vec<usize> },
    #[error("parameter count mismatch: checkpoint has {got}, model needs {want}")]
    CountMismatch { got: usize, want: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Encodes metadata plus named tensors into the container format.
pub fn encode<E: Element>(
    meta: &[(String, String)],
    names: &[String],
    tensors: &[Tensor<E>],
) -> Vec<u8> {
    debug_assert_eq!(names.len(), tensors.len());
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let meta_text: String = meta
        .iter()
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect();
    out.extend_from_slice(&(meta_text.len() as u32).to_le_bytes());
    out.extend_from_slice(meta_text.as_bytes());
    out.extend_from_slice(&(names.len() as u32).to_le_bytes());
    for (name, tensor) in names.iter().zip(tensors) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_f64().to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Truncated {
                needed: self.pos + n - self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Decodes a container into metadata and named tensors.
#[allow(clippy::type_complexity)]
pub fn decode<E: Element>(
    bytes: &[u8],
) -> Result<(Vec<(String, String)>, Vec<(String, Tensor<E>)>), CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let meta_len = r.u32()? as usize;
    let meta_text = core::str::from_utf8(r.take(meta_len)?)
        .map_err(|_| CheckpointError::Utf8 { what: "metadata" })?;
    let meta: Vec<(String, String)> = meta_text
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();

    let count = r.u32()? as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = core::str::from_utf8(r.take(name_len)?)
            .map_err(|_| CheckpointError::Utf8 { what: "parameter name" })?
            .to_string();
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            let raw = r.take(8)?;
            data.push(E::from_f64(f64::from_le_bytes(raw.try_into().unwrap())));
        }
        params.push((
            name,
            Tensor::from_vec(&shape, data).expect("shape/data consistent by construction"),
        ));
    }
    Ok((meta, params))
}

fn meta_value<'a>(
    meta: &'a [(String, String)],
    key: &'static str,
) -> Result<&'a str, CheckpointError> {
    meta.iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or(CheckpointError::MissingMeta(key))
}

fn parse_meta<T: core::str::FromStr>(
    meta: &[(String, String)],
    key: &'static str,
) -> Result<T, CheckpointError> {
    let v = meta_value(meta, key)?;
    v.parse().map_err(|_| CheckpointError::BadMeta { key, value: v.to_string() })
}

/// Serializes a model with its configuration in the header.
pub fn save_model<E: Element>(params: &ModelParams<E>) -> Vec<u8> {
    let cfg = params.config();
    let blocks: Vec<String> = cfg.estimator_blocks.iter().map(|b| b.to_string()).collect();
    let meta = [
        (
            "variant".to_string(),
            match cfg.variant {
                Variant::Paper => "paper".to_string(),
                Variant::Tiny => "tiny".to_string(),
            },
        ),
        ("feature_channels".to_string(), cfg.feature_channels.to_string()),
        ("estimator_blocks".to_string(), blocks.join(",")),
        ("input_height".to_string(), cfg.input_size.0.to_string()),
        ("input_width".to_string(), cfg.input_size.1.to_string()),
        ("precision".to_string(), E::PRECISION.name().to_string()),
    ];
    encode(&meta, params.names(), params.tensors())
}

/// Reconstructs a model from a container, verifying names and shapes.
pub fn load_model<E: Element>(bytes: &[u8]) -> Result<ModelParams<E>, CheckpointError> {
    let (meta, stored) = decode::<E>(bytes)?;
    let variant = match meta_value(&meta, "variant")? {
        "paper" => Variant::Paper,
        "tiny" => Variant::Tiny,
        other => {
            return Err(CheckpointError::BadMeta { key: "variant", value: other.to_string() })
        }
    };
    let blocks_text = meta_value(&meta, "estimator_blocks")?;
    let estimator_blocks: Result<Vec<usize>, _> =
        blocks_text.split(',').map(str::parse::<usize>).collect();
    let cfg = ModelConfig {
        variant,
        feature_channels: parse_meta(&meta, "feature_channels")?,
        estimator_blocks: estimator_blocks.map_err(|_| CheckpointError::BadMeta {
            key: "estimator_blocks",
            value: blocks_text.to_string(),
        })?,
        input_size: (
            parse_meta(&meta, "input_height")?,
            parse_meta(&meta, "input_width")?,
        ),
        batch_norm: false,
    };
    let mut params = ModelParams::<E>::init(cfg, 0)?;
    if stored.len() != params.names().len() {
        return Err(CheckpointError::CountMismatch {
            got: stored.len(),
            want: params.names().len(),
        });
    }
    let names = params.names().to_vec();
    for (name, tensor) in stored {
        let Some(idx) = names.iter().position(|n| *n == name) else {
            return Err(CheckpointError::UnknownParam(name));
        };
        let want = params.tensors()[idx].shape().to_vec();
        if tensor.shape() != want {
            return Err(CheckpointError::ShapeMismatch {
                name,
                got: tensor.shape().to_vec(),
                want,
            });
        }
        params.tensors_mut()[idx] = tensor;
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelConfig;

    #[test]
    fn encode_decode_round_trips() {
        let names = vec!["a.weight".to_string(), "b.bias".to_string()];
        let tensors = vec![
            Tensor::from_fn(&[2, 3], |i| i as f64 * 0.5 - 1.0),
            Tensor::from_vec(&[3], vec![1.0, -2.0, 0.25]).unwrap(),
        ];
        let meta = vec![("precision".to_string(), "f64".to_string())];
        let bytes = encode(&meta, &names, &tensors);
        let (m2, params) = decode::<f64>(&bytes).unwrap();
        assert_eq!(m2, meta);
        assert_eq!(params.len(), 2);
        assert_eq!(params[0].0, "a.weight");
        assert_eq!(params[0].1, tensors[0]);
        assert_eq!(params[1].1, tensors[1]);
    }

    #[test]
    fn bad_magic_and_truncation_are_rejected() {
        assert!(matches!(decode::<f64>(b"NOTMAGIC"), Err(CheckpointError::Truncated { .. }) | Err(CheckpointError::BadMagic)));
        let names = vec!["x".to_string()];
        let tensors = vec![Tensor::<f64>::ones(&[4])];
        let bytes = encode(&[], &names, &tensors);
        assert!(matches!(
            decode::<f64>(&bytes[..bytes.len() - 3]),
            Err(CheckpointError::Truncated { .. })
        ));
        let mut corrupted = bytes.clone();
        corrupted[0] = b'X';
        assert!(matches!(decode::<f64>(&corrupted), Err(CheckpointError::BadMagic)));
    }

    #[test]
    fn model_save_load_round_trips_config_and_tensors() {
        let params = ModelParams::<f64>::init(ModelConfig::tiny(), 5).unwrap();
        let bytes = save_model(&params);
        let loaded = load_model::<f64>(&bytes).unwrap();
        assert_eq!(loaded.names(), params.names());
        assert_eq!(loaded.config().feature_channels, 1);
        assert_eq!(loaded.config().input_size, (64, 64));
        for (a, b) in loaded.tensors().iter().zip(params.tensors()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn save_is_deterministic() {
        let p1 = ModelParams::<f64>::init(ModelConfig::tiny(), 9).unwrap();
        let p2 = ModelParams::<f64>::init(ModelConfig::tiny(), 9).unwrap();
        assert_eq!(save_model(&p1), save_model(&p2));
    }
}
