//! Model file: magic, JSON header, little-endian f32 parameters, CRC32.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::mlp::{BatchNorm, Dense, FeatureFlags, MlpModel};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 8] = b"HDMAPNN1";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub layer_sizes: Vec<usize>,
    pub features: FeatureFlags,
    pub layout_hash: String,
    pub seed: u64,
    pub train_config_digest: String,
    pub format_version: u32,
}

/// Number of f32 values in the payload of a model with `sizes`.
fn payload_len(sizes: &[usize]) -> usize {
    let dense: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    let norms: usize = sizes[1..sizes.len() - 1].iter().map(|w| 4 * w).sum();
    dense + norms
}

pub fn encode_model(model: &MlpModel, header: &ModelHeader) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(16 + json.len() + 4 * payload_len(&header.layer_sizes));
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    let mut put = |xs: &mut dyn Iterator<Item = &f32>| {
        for x in xs {
            out.extend_from_slice(&x.to_le_bytes());
        }
    };
    for d in &model.dense {
        put(&mut d.weight.iter());
        put(&mut d.bias.iter());
    }
    for bn in &model.norms {
        put(&mut bn.gamma.iter());
        put(&mut bn.beta.iter());
        put(&mut bn.running_mean.iter());
        put(&mut bn.running_var.iter());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn decode_model(bytes: &[u8], path: &Path) -> Result<(MlpModel, ModelHeader)> {
    let err = |message: String| Error::Format { path: path.to_path_buf(), message };
    if bytes.len() < 16 || &bytes[..8] != MODEL_MAGIC {
        return Err(err("not a model file (bad magic)".into()));
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(err("checksum mismatch".into()));
    }
    let hlen = u32::from_le_bytes(body[8..12].try_into().unwrap()) as usize;
    if 12 + hlen > body.len() {
        return Err(err(format!("header length {hlen} exceeds file size")));
    }
    let header: ModelHeader =
        serde_json::from_slice(&body[12..12 + hlen]).map_err(|e| err(format!("bad header: {e}")))?;
    if header.format_version != MODEL_FORMAT_VERSION {
        return Err(err(format!(
            "unsupported format version {} (expected {MODEL_FORMAT_VERSION})",
            header.format_version
        )));
    }
    let sizes = &header.layer_sizes;
    if sizes.len() < 2 || sizes[0] != header.features.width() {
        return Err(err(format!("inconsistent layer sizes {sizes:?}")));
    }
    let payload = &body[12 + hlen..];
    let expected = 4 * payload_len(sizes);
    if payload.len() != expected {
        return Err(err(format!("expected {expected} parameter bytes, found {}", payload.len())));
    }
    let mut values = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let mut take = |n: usize| -> Vec<f32> { values.by_ref().take(n).collect() };
    let mut dense = Vec::new();
    for w in sizes.windows(2) {
        let weight = Array2::from_shape_vec((w[0], w[1]), take(w[0] * w[1])).unwrap();
        let bias = Array1::from(take(w[1]));
        dense.push(Dense { weight, bias });
    }
    let mut norms = Vec::new();
    for &w in &sizes[1..sizes.len() - 1] {
        norms.push(BatchNorm {
            gamma: Array1::from(take(w)),
            beta: Array1::from(take(w)),
            running_mean: Array1::from(take(w)),
            running_var: Array1::from(take(w)),
        });
    }
    let model = MlpModel { dense, norms, features: header.features };
    Ok((model, header))
}

pub fn save_model(model: &MlpModel, header: &ModelHeader, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_model(model, header)?)?;
    Ok(())
}

/// Loads a model and rejects it unless it was trained for `layout_hash`.
pub fn load_model(path: impl AsRef<Path>, layout_hash: &str) -> Result<(MlpModel, ModelHeader)> {
    let path = path.as_ref();
    let (model, header) = decode_model(&std::fs::read(path)?, path)?;
    if header.layout_hash != layout_hash {
        return Err(Error::LayoutMismatch { file: header.layout_hash, current: layout_hash.to_string() });
    }
    Ok((model, header))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (MlpModel, ModelHeader) {
        let features = FeatureFlags::default();
        let mut model = MlpModel::new(&[3, 5, 4, 6], features, 11).unwrap();
        model.dense[2].weight[[1, 2]] = 0.25;
        model.norms[0].running_var[3] = 1.7;
        let header = ModelHeader {
            layer_sizes: model.sizes(),
            features,
            layout_hash: "0123456789abcdef".into(),
            seed: 11,
            train_config_digest: "deadbeef".into(),
            format_version: MODEL_FORMAT_VERSION,
        };
        (model, header)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (model, header) = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        save_model(&model, &header, &path).unwrap();
        let (back, h) = load_model(&path, "0123456789abcdef").unwrap();
        assert_eq!(back, model);
        assert_eq!(h, header);
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let (model, header) = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        save_model(&model, &header, &path).unwrap();
        match load_model(&path, "ffffffffffffffff") {
            Err(Error::LayoutMismatch { file, current }) => {
                assert_eq!(file, "0123456789abcdef");
                assert_eq!(current, "ffffffffffffffff");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn corruption_and_version_are_detected() {
        let (model, header) = sample();
        let mut bytes = encode_model(&model, &header).unwrap();
        let n = bytes.len();
        bytes[n - 10] ^= 1;
        assert!(decode_model(&bytes, Path::new("m")).unwrap_err().to_string().contains("checksum"));

        let bad = ModelHeader { format_version: 7, ..header };
        let bytes = encode_model(&model, &bad).unwrap();
        assert!(decode_model(&bytes, Path::new("m")).unwrap_err().to_string().contains("version 7"));
    }
}
