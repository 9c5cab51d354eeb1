//! Video snippet-feature corpora: in-memory types, the synthetic generator,
//! and the on-disk dataset format.

mod format;
mod synth;

pub use format::{load_corpus, save_corpus, DATASET_FORMAT, DATASET_VERSION, MANIFEST_FILE};
pub use synth::{generate, split, SynthConfig};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::evaluation::GroundTruthSegment;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split {other:?} (train, val, test)"))),
        }
    }
}

/// Ground-truth action instance, half-open in snippet units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoSample {
    pub id: String,
    /// `T x F`.
    pub features: Tensor,
    /// Foreground class ids, ascending.
    pub labels: Vec<usize>,
    /// Evaluation only; training never reads these.
    pub segments: Vec<Segment>,
    pub split: Split,
    pub fps: Option<f64>,
}

impl VideoSample {
    pub fn num_snippets(&self) -> usize {
        self.features.shape()[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub videos: Vec<VideoSample>,
    /// Class signatures of a synthetic corpus; absent for external features.
    pub prototypes: Option<Vec<Vec<f64>>>,
}

impl Corpus {
    pub fn videos_in(&self, split: Split) -> Vec<&VideoSample> {
        self.videos.iter().filter(|v| v.split == split).collect()
    }

    pub fn ground_truth(&self, split: Split) -> Vec<GroundTruthSegment> {
        self.videos_in(split)
            .into_iter()
            .flat_map(|v| {
                v.segments.iter().map(|s| GroundTruthSegment {
                    video_id: v.id.clone(),
                    t_start: s.start,
                    t_end: s.end,
                    class_id: s.class,
                })
            })
            .collect()
    }

    pub fn max_len(&self) -> usize {
        self.videos.iter().map(VideoSample::num_snippets).max().unwrap_or(0)
    }

    /// Structural checks shared by the generator and the loader.
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.feature_dim == 0 {
            return Err(Error::invalid("num_classes and feature_dim must be positive"));
        }
        let mut ids = std::collections::HashSet::new();
        for v in &self.videos {
            if !ids.insert(v.id.as_str()) {
                return Err(Error::invalid(format!("duplicate video id {:?}", v.id)));
            }
            validate_video(v, self.num_classes, self.feature_dim)?;
        }
        Ok(())
    }
}

fn validate_video(v: &VideoSample, num_classes: usize, feature_dim: usize) -> Result<()> {
    let bad = |msg: String| Err(Error::invalid(format!("video {:?}: {msg}", v.id)));
    if v.id.is_empty() || v.id.contains(['/', '\\']) || v.id.starts_with('.') {
        return bad("id must be a plain file name".into());
    }
    match v.features.shape() {
        [t, f] if *t > 0 && *f == feature_dim => {}
        s => return bad(format!("features shape {s:?}, expected [T>0, {feature_dim}]")),
    }
    if v.labels.is_empty() {
        return bad("no foreground label".into());
    }
    if v.labels.windows(2).any(|w| w[0] >= w[1]) || v.labels.iter().any(|&c| c >= num_classes) {
        return bad(format!("labels {:?} must be ascending class ids below {num_classes}", v.labels));
    }
    let t_len = v.num_snippets();
    for s in &v.segments {
        if s.start >= s.end || s.end > t_len || s.class >= num_classes {
            return bad(format!("segment {s:?} invalid for T={t_len}"));
        }
        if !v.labels.contains(&s.class) {
            return bad(format!("segment class {} missing from labels", s.class));
        }
    }
    Ok(())
}

/// Label set implied by a video's segments.
pub fn labels_from_segments(segments: &[Segment]) -> Vec<usize> {
    let mut labels: Vec<usize> = segments.iter().map(|s| s.class).collect();
    labels.sort_unstable();
    labels.dedup();
    labels
}
