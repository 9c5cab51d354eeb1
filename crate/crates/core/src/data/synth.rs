//! Synthetic corpora with a strong central "core" and weaker flanks inside
//! every action, over Gaussian background noise.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::{labels_from_segments, Corpus, Segment, Split, VideoSample};
use crate::error::{Error, Result};

/// Background snippets kept between neighbouring actions.
const MIN_GAP: usize = 2;
const PLACEMENT_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub feature_dim: usize,
    /// Training pool size, before the validation split.
    pub num_train: usize,
    pub num_test: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub min_actions: usize,
    pub max_actions: usize,
    pub min_action_len: usize,
    pub max_action_len: usize,
    /// Fraction of each action, centred, carrying the strong signature.
    pub core_fraction: f64,
    pub core_gain: f64,
    pub flank_gain: f64,
    pub noise_scale: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: 5,
            feature_dim: 16,
            num_train: 200,
            num_test: 60,
            min_len: 60,
            max_len: 120,
            min_actions: 1,
            max_actions: 4,
            min_action_len: 8,
            max_action_len: 24,
            core_fraction: 0.4,
            core_gain: 3.0,
            flank_gain: 1.0,
            noise_scale: 1.0,
            val_fraction: 0.3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::invalid(m));
        if self.num_classes == 0 || self.feature_dim == 0 {
            return fail("num_classes and feature_dim must be positive".into());
        }
        if self.num_train < 2 {
            return fail("num_train must be at least 2 to leave a validation video".into());
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return fail(format!("length range [{}, {}] is empty", self.min_len, self.max_len));
        }
        if self.min_actions == 0 || self.min_actions > self.max_actions {
            return fail(format!(
                "actions per video [{}, {}] must be nonempty and start at 1 or more",
                self.min_actions, self.max_actions
            ));
        }
        if self.min_action_len == 0 || self.min_action_len > self.max_action_len {
            return fail(format!(
                "action length range [{}, {}] is empty",
                self.min_action_len, self.max_action_len
            ));
        }
        if !(self.core_fraction > 0.0 && self.core_fraction <= 1.0) {
            return fail(format!("core_fraction {} outside (0, 1]", self.core_fraction));
        }
        if !(self.core_gain > self.flank_gain && self.flank_gain > 0.0) {
            return fail(format!(
                "need core_gain > flank_gain > 0, got {} and {}",
                self.core_gain, self.flank_gain
            ));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return fail(format!("noise_scale {} must be finite and >= 0", self.noise_scale));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return fail(format!("val_fraction {} outside (0, 1)", self.val_fraction));
        }
        Ok(())
    }
}

/// Training pool first (marked train), then the test videos. Call [`split`]
/// to carve out validation videos.
pub fn generate(config: &SynthConfig) -> Result<Corpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let prototypes: Vec<Vec<f64>> = (0..config.num_classes)
        .map(|_| unit_vector(&mut rng, config.feature_dim))
        .collect();
    let noise = Normal::new(0.0, config.noise_scale).map_err(|e| Error::invalid(e.to_string()))?;

    let mut videos = Vec::with_capacity(config.num_train + config.num_test);
    let pools = [(Split::Train, config.num_train, "train"), (Split::Test, config.num_test, "test")];
    for (split, count, prefix) in pools {
        for i in 0..count {
            let id = format!("{prefix}_{i:04}");
            let t_len = rng.random_range(config.min_len..=config.max_len);
            let segments = place_segments(config, &id, t_len, &mut rng)?;
            let features = render(config, &prototypes, &segments, t_len, &noise, &mut rng);
            videos.push(VideoSample {
                id,
                features,
                labels: labels_from_segments(&segments),
                segments,
                split,
                fps: None,
            });
        }
    }
    let corpus = Corpus {
        num_classes: config.num_classes,
        feature_dim: config.feature_dim,
        videos,
        prototypes: Some(prototypes),
    };
    corpus.validate()?;
    Ok(corpus)
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn place_segments(config: &SynthConfig, id: &str, t_len: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Segment>> {
    let min_needed = config.min_actions * config.min_action_len + (config.min_actions - 1) * MIN_GAP;
    if min_needed > t_len {
        return Err(Error::Generation(format!(
            "video {id}: T={t_len} cannot hold {} actions of length >= {} with gaps of {MIN_GAP}",
            config.min_actions, config.min_action_len
        )));
    }
    for _ in 0..PLACEMENT_ATTEMPTS {
        let n = rng.random_range(config.min_actions..=config.max_actions);
        let lens: Vec<usize> = (0..n)
            .map(|_| rng.random_range(config.min_action_len..=config.max_action_len))
            .collect();
        let used = lens.iter().sum::<usize>() + (n - 1) * MIN_GAP;
        if used > t_len {
            continue;
        }
        let free = t_len - used;
        let mut offsets: Vec<usize> = (0..n).map(|_| rng.random_range(0..=free)).collect();
        offsets.sort_unstable();
        let mut segments = Vec::with_capacity(n);
        let mut cursor = 0;
        for (i, (&len, &off)) in lens.iter().zip(&offsets).enumerate() {
            let start = cursor + off;
            segments.push(Segment {
                start,
                end: start + len,
                class: rng.random_range(0..config.num_classes),
            });
            cursor += len + if i + 1 < n { MIN_GAP } else { 0 };
        }
        return Ok(segments);
    }
    Err(Error::Generation(format!(
        "video {id}: no placement of {}..={} actions of length {}..={} fits T={t_len}",
        config.min_actions, config.max_actions, config.min_action_len, config.max_action_len
    )))
}

/// Snippet range of an action's core.
pub(crate) fn core_range(seg: &Segment, core_fraction: f64) -> (usize, usize) {
    let len = seg.end - seg.start;
    let core = ((core_fraction * len as f64).round() as usize).clamp(1, len);
    let start = seg.start + (len - core) / 2;
    (start, start + core)
}

fn render(
    config: &SynthConfig,
    prototypes: &[Vec<f64>],
    segments: &[Segment],
    t_len: usize,
    noise: &Normal<f64>,
    rng: &mut ChaCha8Rng,
) -> Tensor {
    let f = config.feature_dim;
    let mut gain = vec![0.0; t_len];
    let mut class = vec![0usize; t_len];
    for seg in segments {
        let (cs, ce) = core_range(seg, config.core_fraction);
        for t in seg.start..seg.end {
            gain[t] = if (cs..ce).contains(&t) { config.core_gain } else { config.flank_gain };
            class[t] = seg.class;
        }
    }
    let mut data = Vec::with_capacity(t_len * f);
    for t in 0..t_len {
        for d in 0..f {
            let v = gain[t] * prototypes[class[t]][d] + noise.sample(rng);
            // Stored as 32-bit floats on disk; keep memory bit-identical.
            data.push(v as f32 as f64);
        }
    }
    Tensor::matrix(t_len, f, data).expect("sized")
}

/// Reassign the training pool into train and validation videos. At least
/// one video goes to each side.
pub fn split(corpus: &Corpus, val_fraction: f64, seed: u64) -> Result<Corpus> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::invalid(format!("val_fraction {val_fraction} outside (0, 1)")));
    }
    let mut pool: Vec<usize> = (0..corpus.videos.len())
        .filter(|&i| corpus.videos[i].split != Split::Test)
        .collect();
    if pool.len() < 2 {
        return Err(Error::invalid("need at least two non-test videos to split"));
    }
    let n_val = ((val_fraction * pool.len() as f64).round() as usize).clamp(1, pool.len() - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    let mut out = corpus.clone();
    for (rank, &i) in pool.iter().enumerate() {
        out.videos[i].split = if rank < n_val { Split::Val } else { Split::Train };
    }
    Ok(out)
}
