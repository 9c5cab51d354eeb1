//! Dataset directory: `manifest.json` plus one `<id>.feat` per video holding
//! row-major `T x F` little-endian `f32` values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::{Corpus, Segment, Split, VideoSample};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::checkpoint::json_offset;

pub const MANIFEST_FILE: &str = "manifest.json";
/// Marker value of the manifest's `format` field.
pub const DATASET_FORMAT: &str = "hamloc-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    num_classes: usize,
    feature_dim: usize,
    videos: Vec<VideoEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prototypes: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct VideoEntry {
    id: String,
    #[serde(rename = "T")]
    num_snippets: usize,
    labels: Vec<usize>,
    #[serde(default)]
    segments: Vec<Segment>,
    #[serde(default = "default_split")]
    split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fps: Option<f64>,
}

fn default_split() -> Split {
    Split::Train
}

pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    corpus.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for v in &corpus.videos {
        let mut bytes = Vec::with_capacity(v.features.len() * 4);
        for &x in v.features.data() {
            bytes.extend_from_slice(&(x as f32).to_le_bytes());
        }
        write_atomic(&dir.join(format!("{}.feat", v.id)), &bytes)?;
    }
    let manifest = Manifest {
        format: DATASET_FORMAT.to_string(),
        version: DATASET_VERSION,
        num_classes: corpus.num_classes,
        feature_dim: corpus.feature_dim,
        videos: corpus
            .videos
            .iter()
            .map(|v| VideoEntry {
                id: v.id.clone(),
                num_snippets: v.num_snippets(),
                labels: v.labels.clone(),
                segments: v.segments.clone(),
                split: v.split,
                fps: v.fps,
            })
            .collect(),
        prototypes: corpus.prototypes.clone(),
    };
    let mut json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    json.push(b'\n');
    write_atomic(&dir.join(MANIFEST_FILE), &json)
}

pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = std::fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest =
        serde_json::from_slice(&text).map_err(|e| Error::format(&mpath, json_offset(&text, &e) as u64, e.to_string()))?;
    if manifest.format != DATASET_FORMAT {
        return Err(Error::format(
            &mpath,
            marker_offset(&text, &manifest.format),
            format!("format marker {:?}, expected {DATASET_FORMAT:?}", manifest.format),
        ));
    }
    if manifest.version != DATASET_VERSION {
        return Err(Error::format(
            &mpath,
            find(&text, b"\"version\"").unwrap_or(0),
            format!("unsupported dataset version {}", manifest.version),
        ));
    }
    let f = manifest.feature_dim;
    let mut videos = Vec::with_capacity(manifest.videos.len());
    for entry in manifest.videos {
        let entry_offset = find(&text, format!("\"{}\"", entry.id).as_bytes()).unwrap_or(0);
        if entry.id.is_empty() || entry.id.contains(['/', '\\']) || entry.id.starts_with('.') {
            return Err(Error::format(&mpath, entry_offset, format!("bad video id {:?}", entry.id)));
        }
        let fpath = dir.join(format!("{}.feat", entry.id));
        let blob = std::fs::read(&fpath).map_err(|e| Error::io(&fpath, e))?;
        let expected = entry.num_snippets * f * 4;
        if blob.len() != expected {
            return Err(Error::format(
                &fpath,
                blob.len().min(expected) as u64,
                format!(
                    "{} bytes, expected T={} x F={f} x 4 = {expected}",
                    blob.len(),
                    entry.num_snippets
                ),
            ));
        }
        let data = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let features = Tensor::new(vec![entry.num_snippets, f], data)?;
        videos.push(VideoSample {
            id: entry.id,
            features,
            labels: entry.labels,
            segments: entry.segments,
            split: entry.split,
            fps: entry.fps,
        });
    }
    let corpus = Corpus {
        num_classes: manifest.num_classes,
        feature_dim: f,
        videos,
        prototypes: manifest.prototypes,
    };
    corpus
        .validate()
        .map_err(|e| Error::format(&mpath, 0, e.to_string()))?;
    Ok(corpus)
}

fn find(haystack: &[u8], needle: &[u8]) -> Option<u64> {
    haystack.windows(needle.len()).position(|w| w == needle).map(|p| p as u64)
}

/// Offset of the first byte where the `format` value departs from the
/// expected marker.
fn marker_offset(text: &[u8], found: &str) -> u64 {
    let Some(key) = find(text, b"\"format\"") else {
        return 0;
    };
    let after = &text[key as usize + 8..];
    let Some(q) = after.iter().position(|&b| b == b'"') else {
        return key;
    };
    let value_start = key + 8 + q as u64 + 1;
    let diff = found
        .bytes()
        .zip(DATASET_FORMAT.bytes())
        .position(|(a, b)| a != b)
        .unwrap_or(found.len().min(DATASET_FORMAT.len()));
    value_start + diff as u64
}
