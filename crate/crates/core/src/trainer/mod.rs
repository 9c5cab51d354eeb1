//! Seeded Adam training with validation-based model selection, plus
//! ablation and grid-search drivers.

mod ablation;
mod adam;

pub use ablation::{
    ablate, grid_search, run_configs, run_table1, set_axis, table1_plan, AblationRow, AblationTable, GridResult, GridRow,
    LossToggles, AXES, DEFAULT_GRID_CAP,
};
pub use adam::{adam_step, AdamConfig, AdamState};

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor};
use crate::data::{Corpus, Split, VideoSample};
use crate::error::{Error, Result};
use crate::evaluation::{classification_map, default_iou_thresholds, evaluate, segment_coverage, EvalReport};
use crate::localization::{localize, Detection, LocalizationConfig};
use crate::losses::{total_loss, BackgroundModeConfig, LossOptions, LossWeights};
use crate::model::{forward, predict, DropMode, ForwardOptions, HamNetConfig, HamNetParams, ModelOutput};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda0: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Top-k size; when unset, `max(1, ceil(T / 10))` of the sequence at hand.
    pub k: Option<usize>,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    /// Snippets sampled per training video; when unset, `min(T_max, 100)`.
    pub train_snippets: Option<usize>,
    pub seed: u64,
    pub eval_every: usize,
    pub background_mode: BackgroundModeConfig,
    pub sparsity_mean: bool,
    pub guide_mean: bool,
    pub semisoft_grad: bool,
    pub drop_mode: DropMode,
    pub cls_hidden: Option<usize>,
    pub attn_hidden: Option<usize>,
    pub localization: LocalizationConfig,
    pub iou_thresholds: Vec<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            lambda0: w.bcl,
            lambda1: w.sal,
            lambda2: w.ssal,
            lambda3: w.hal,
            alpha: w.sparsity,
            beta: w.guide,
            gamma: 0.2,
            k: None,
            learning_rate: 1e-5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 100,
            train_snippets: None,
            seed: 0,
            eval_every: 1,
            background_mode: BackgroundModeConfig::Softmax,
            sparsity_mean: false,
            guide_mean: false,
            semisoft_grad: false,
            drop_mode: DropMode::Discriminative,
            cls_hidden: None,
            attn_hidden: None,
            localization: LocalizationConfig::default(),
            iou_thresholds: default_iou_thresholds(),
        }
    }
}

impl TrainConfig {
    /// Settings for the synthetic desk-scale corpora: a larger step and
    /// fewer epochs than the default schedule, and sparsity and guide terms
    /// averaged over snippets.
    pub fn desk_scale() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 30,
            eval_every: 5,
            sparsity_mean: true,
            guide_mean: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::invalid(m));
        self.weights().validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.epochs == 0 || self.eval_every == 0 {
            return fail("epochs and eval_every must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return fail(format!("gamma {} outside [0, 1]", self.gamma));
        }
        if self.k == Some(0) || self.train_snippets == Some(0) {
            return fail("k and train_snippets must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || self.adam_eps <= 0.0 {
            return fail("adam betas must lie in [0, 1) and eps must be positive".into());
        }
        if self.iou_thresholds.is_empty() || self.iou_thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            return fail("iou_thresholds must be nonempty values in (0, 1]".into());
        }
        self.localization.validate()
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            bcl: self.lambda0,
            sal: self.lambda1,
            ssal: self.lambda2,
            hal: self.lambda3,
            sparsity: self.alpha,
            guide: self.beta,
        }
    }

    pub fn set_weights(&mut self, w: &LossWeights) {
        self.lambda0 = w.bcl;
        self.lambda1 = w.sal;
        self.lambda2 = w.ssal;
        self.lambda3 = w.hal;
        self.alpha = w.sparsity;
        self.beta = w.guide;
    }

    pub fn loss_options(&self) -> LossOptions {
        LossOptions {
            background_mode: self.background_mode,
            sparsity_mean: self.sparsity_mean,
            guide_mean: self.guide_mean,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn k_for(&self, num_snippets: usize) -> usize {
        self.k.unwrap_or_else(|| num_snippets.div_ceil(10).max(1))
    }

    pub fn forward_options(&self, num_snippets: usize) -> ForwardOptions {
        ForwardOptions {
            gamma: self.gamma,
            k: self.k_for(num_snippets),
            drop_mode: self.drop_mode,
            semisoft_grad: self.semisoft_grad,
        }
    }

    pub fn train_snippets_for(&self, corpus: &Corpus) -> usize {
        self.train_snippets.unwrap_or_else(|| corpus.max_len().clamp(1, 100))
    }

    pub fn model_config(&self, feature_dim: usize, num_classes: usize) -> HamNetConfig {
        let mut c = HamNetConfig::new(feature_dim, num_classes);
        if let Some(h) = self.cls_hidden {
            c.cls_hidden = h;
        }
        if let Some(h) = self.attn_hidden {
            c.attn_hidden = h;
        }
        c
    }
}

/// Keep `n` snippets chosen uniformly without replacement, in temporal
/// order. Sequences of length `n` or less are returned unchanged.
pub fn sample_snippets<R: Rng + ?Sized>(sample: &VideoSample, n: usize, rng: &mut R) -> VideoSample {
    let t_len = sample.num_snippets();
    if t_len <= n {
        return sample.clone();
    }
    let mut idx = rand::seq::index::sample(rng, t_len, n).into_vec();
    idx.sort_unstable();
    let f = sample.features.shape()[1];
    let mut data = Vec::with_capacity(n * f);
    for &i in &idx {
        data.extend_from_slice(sample.features.row(i));
    }
    VideoSample {
        features: Tensor::matrix(n, f, data).expect("sized"),
        ..sample.clone()
    }
}

/// Per-epoch means of the loss components and the validation score when
/// it was computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub bcl: f64,
    pub sal: f64,
    pub ssal: f64,
    pub hal: f64,
    pub sparsity: f64,
    pub guide: f64,
    pub total: f64,
    pub val_avg_map: Option<f64>,
}

pub const LOG_HEADER: &str = "epoch,bcl,sal,ssal,hal,sparsity,guide,total,val_avg_map";

pub fn log_to_csv(log: &[EpochLog]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for e in log {
        write!(
            s,
            "{},{},{},{},{},{},{},{},",
            e.epoch, e.bcl, e.sal, e.ssal, e.hal, e.sparsity, e.guide, e.total
        )
        .unwrap();
        if let Some(m) = e.val_avg_map {
            write!(s, "{m}").unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn log_from_csv(text: &str) -> Result<Vec<EpochLog>> {
    let mut lines = text.lines();
    if lines.next() != Some(LOG_HEADER) {
        return Err(Error::invalid(format!("training log must start with {LOG_HEADER:?}")));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 9 {
                return Err(Error::invalid(format!("log row {line:?} has {} cells", cells.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| Error::invalid(format!("log cell {s:?}: {e}")));
            Ok(EpochLog {
                epoch: cells[0].parse().map_err(|e| Error::invalid(format!("epoch {:?}: {e}", cells[0])))?,
                bcl: num(cells[1])?,
                sal: num(cells[2])?,
                ssal: num(cells[3])?,
                hal: num(cells[4])?,
                sparsity: num(cells[5])?,
                guide: num(cells[6])?,
                total: num(cells[7])?,
                val_avg_map: if cells[8].is_empty() { None } else { Some(num(cells[8])?) },
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation score.
    pub best: HamNetParams,
    pub best_epoch: usize,
    pub best_val_avg_map: f64,
    pub log: Vec<EpochLog>,
}

/// Inference over one split: model outputs and localized detections, in
/// corpus order.
pub fn infer_split(
    params: &HamNetParams,
    corpus: &Corpus,
    split: Split,
    config: &TrainConfig,
) -> Result<Vec<(String, ModelOutput, Vec<Detection>)>> {
    corpus
        .videos_in(split)
        .par_iter()
        .map(|v| {
            let out = predict(params, &v.features, &config.forward_options(v.num_snippets()))?;
            let dets = localize(&out, &config.localization)
                .iter()
                .map(|p| Detection::new(&v.id, p, v.fps))
                .collect();
            Ok((v.id.clone(), out, dets))
        })
        .collect()
}

/// Localization report on `split`, with classification mAP from the
/// attention-guided video scores.
pub fn evaluate_split(params: &HamNetParams, corpus: &Corpus, split: Split, config: &TrainConfig) -> Result<EvalReport> {
    Ok(evaluate_split_detailed(params, corpus, split, config)?.0)
}

/// Like [`evaluate_split`], also returning the ground-truth coverage at
/// IoU 0.5.
pub fn evaluate_split_detailed(
    params: &HamNetParams,
    corpus: &Corpus,
    split: Split,
    config: &TrainConfig,
) -> Result<(EvalReport, f64)> {
    let inferred = infer_split(params, corpus, split, config)?;
    let dets: Vec<Detection> = inferred.iter().flat_map(|(_, _, d)| d.iter().cloned()).collect();
    let gt = corpus.ground_truth(split);
    let mut report = evaluate(&dets, &gt, &config.iou_thresholds, corpus.num_classes);
    let scores: Vec<Vec<f64>> = inferred.iter().map(|(_, o, _)| o.p_attn.clone()).collect();
    let labels: Vec<Vec<usize>> = corpus.videos_in(split).iter().map(|v| v.labels.clone()).collect();
    report.classification_map = Some(classification_map(&scores, &labels, corpus.num_classes));
    Ok((report, segment_coverage(&dets, &gt, 0.5)))
}

/// Train on the `train` split, selecting by `val` avg mAP (earliest epoch
/// wins ties). The final epoch is always evaluated.
pub fn train(corpus: &Corpus, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let train_videos = corpus.videos_in(Split::Train);
    if train_videos.is_empty() || corpus.videos_in(Split::Val).is_empty() {
        return Err(Error::invalid("corpus needs nonempty train and val splits"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let model_config = config.model_config(corpus.feature_dim, corpus.num_classes);
    model_config.validate()?;
    let mut params = HamNetParams::init(model_config, &mut rng);
    let mut state = AdamState::new(&params);
    let adam = config.adam();
    let weights = config.weights();
    let loss_opts = config.loss_options();
    let n_sample = config.train_snippets_for(corpus);

    let mut order: Vec<usize> = (0..train_videos.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, HamNetParams)> = None;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0; 7];
        for &vi in &order {
            let video = sample_snippets(train_videos[vi], n_sample, &mut rng);
            let mut g = Graph::new();
            let pv = params.bind(&mut g, true);
            let x = g.constant(video.features.clone());
            let out = forward(&mut g, x, &pv, &params.config, &config.forward_options(video.num_snippets()))?;
            let (loss, b) = total_loss(&mut g, &out, &video.labels, &weights, &loss_opts)?;
            if !b.total.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    video: video.id.clone(),
                    value: b.total,
                });
            }
            g.backward(loss)?;
            let grads: Vec<Option<&[f64]>> = pv.all().iter().map(|&v| g.grad(v)).collect();
            adam_step(&mut params, &grads, &mut state, &adam)?;
            for (s, v) in sums.iter_mut().zip(b.components().iter().chain([&b.total])) {
                *s += v;
            }
        }
        let n = order.len() as f64;
        let val_avg_map = if epoch % config.eval_every == 0 || epoch == config.epochs {
            let m = evaluate_split(&params, corpus, Split::Val, config)?.avg_map;
            if best.as_ref().is_none_or(|(b, _, _)| m > *b) {
                best = Some((m, epoch, params.clone()));
            }
            Some(m)
        } else {
            None
        };
        log.push(EpochLog {
            epoch,
            bcl: sums[0] / n,
            sal: sums[1] / n,
            ssal: sums[2] / n,
            hal: sums[3] / n,
            sparsity: sums[4] / n,
            guide: sums[5] / n,
            total: sums[6] / n,
            val_avg_map,
        });
    }
    let (best_val_avg_map, best_epoch, best) = best.expect("final epoch is evaluated");
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_val_avg_map,
        log,
    })
}
