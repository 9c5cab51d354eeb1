//! Binary checkpoint: `HAMN`, a little-endian `u32` version, a `u32`
//! manifest length, the JSON manifest, then every tensor as little-endian
//! `f64` values at the byte offsets the manifest lists (relative to the
//! start of the blob section).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::params::{HamNetConfig, HamNetParams, PARAM_NAMES};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HAMN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    config: HamNetConfig,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

pub fn encode_checkpoint(params: &HamNetParams) -> Vec<u8> {
    let mut offset = 0u64;
    let tensors = params
        .tensors()
        .iter()
        .zip(PARAM_NAMES)
        .map(|(t, name)| {
            let entry = TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                offset,
            };
            offset += 8 * t.len() as u64;
            entry
        })
        .collect();
    let manifest = Manifest {
        config: params.config.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");

    let mut out = Vec::with_capacity(12 + json.len() + offset as usize);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in params.tensors() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<HamNetParams> {
    let fail = |offset: usize, msg: String| Error::format(path, offset as u64, msg);
    if bytes.len() < 12 {
        return Err(fail(bytes.len(), "truncated header".into()));
    }
    if let Some(i) = (0..4).find(|&i| bytes[i] != CHECKPOINT_MAGIC[i]) {
        return Err(fail(i, "bad magic, expected \"HAMN\"".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(fail(4, format!("unsupported checkpoint version {version}")));
    }
    let mlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let blob_start = 12 + mlen;
    if bytes.len() < blob_start {
        return Err(fail(bytes.len(), format!("manifest length {mlen} exceeds file")));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[12..blob_start])
        .map_err(|e| fail(12 + json_offset(&bytes[12..blob_start], &e), format!("manifest: {e}")))?;

    let blob = &bytes[blob_start..];
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    let mut expected_end = 0usize;
    for entry in &manifest.tensors {
        let n: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start + 8 * n;
        if end > blob.len() {
            return Err(fail(
                blob_start + blob.len(),
                format!("tensor {} truncated: needs bytes {start}..{end} of blob", entry.name),
            ));
        }
        let data = blob[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(Tensor::new(entry.shape.clone(), data)?);
        expected_end = expected_end.max(end);
    }
    if expected_end != blob.len() {
        return Err(fail(
            blob_start + expected_end,
            format!("{} trailing bytes after tensors", blob.len() - expected_end),
        ));
    }
    for (entry, name) in manifest.tensors.iter().zip(PARAM_NAMES) {
        if entry.name != name {
            return Err(fail(12, format!("unexpected tensor {} (wanted {name})", entry.name)));
        }
    }
    HamNetParams::from_tensors(manifest.config, tensors).map_err(|e| fail(12, e.to_string()))
}

pub fn save_checkpoint(params: &HamNetParams, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(params))
}

pub fn load_checkpoint(path: &Path) -> Result<HamNetParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

/// Byte offset of a JSON error within `text`.
pub(crate) fn json_offset(text: &[u8], e: &serde_json::Error) -> usize {
    let (line, col) = (e.line(), e.column());
    if line == 0 {
        return 0;
    }
    let mut offset = 0;
    for (i, l) in text.split(|&b| b == b'\n').enumerate() {
        if i + 1 == line {
            return offset + col.saturating_sub(1);
        }
        offset += l.len() + 1;
    }
    text.len()
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn sample() -> HamNetParams {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        HamNetParams::init(HamNetConfig::new(4, 2), &mut rng)
    }

    #[test]
    fn round_trip_is_exact() {
        let p = sample();
        let bytes = encode_checkpoint(&p);
        assert_eq!(&bytes[..4], b"HAMN");
        let q = decode_checkpoint(&bytes, Path::new("mem")).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn corrupt_magic_reports_offset() {
        let mut bytes = encode_checkpoint(&sample());
        bytes[2] ^= 0xff;
        match decode_checkpoint(&bytes, Path::new("mem")) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_blob_rejected() {
        let bytes = encode_checkpoint(&sample());
        let cut = &bytes[..bytes.len() - 5];
        assert!(matches!(
            decode_checkpoint(cut, Path::new("mem")),
            Err(Error::Format { .. })
        ));
        let mut long = bytes.clone();
        long.extend_from_slice(&[0; 8]);
        assert!(decode_checkpoint(&long, Path::new("mem")).is_err());
    }
}
