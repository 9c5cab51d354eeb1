//! Turning model outputs into scored temporal proposals.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelOutput;

/// Frames per snippet, for converting snippet indices to seconds.
pub const SNIPPET_FRAMES: f64 = 16.0;

/// A half-open snippet interval with its class and score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub t_start: usize,
    pub t_end: usize,
    pub class_id: usize,
    pub score: f64,
}

impl Proposal {
    pub fn len(&self) -> usize {
        self.t_end - self.t_start
    }

    pub fn is_empty(&self) -> bool {
        self.t_end <= self.t_start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationConfig {
    pub class_gate: f64,
    pub proposal_thresholds: Vec<f64>,
    pub zeta: f64,
    pub nms_iou: f64,
    /// Moving-average window applied to each gated class's attention-guided
    /// CAS before scoring.
    pub smooth_window: Option<usize>,
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        Self {
            class_gate: 0.1,
            proposal_thresholds: (0..17).map(|i| 0.1 + 0.05 * i as f64).collect(),
            zeta: 0.2,
            nms_iou: 0.5,
            smooth_window: None,
        }
    }
}

impl LocalizationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.proposal_thresholds.is_empty() {
            return Err(Error::invalid("proposal_thresholds is empty"));
        }
        for w in self.proposal_thresholds.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::invalid("proposal_thresholds must be strictly increasing"));
            }
        }
        if let Some(t) = self.proposal_thresholds.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(Error::invalid(format!("proposal threshold {t} outside (0, 1)")));
        }
        if !(self.nms_iou > 0.0 && self.nms_iou <= 1.0) {
            return Err(Error::invalid(format!("nms_iou {} outside (0, 1]", self.nms_iou)));
        }
        if !self.zeta.is_finite() || !self.class_gate.is_finite() {
            return Err(Error::invalid("zeta and class_gate must be finite"));
        }
        if let Some(w) = self.smooth_window {
            if w == 0 || w % 2 == 0 {
                return Err(Error::invalid(format!("smooth_window {w} must be odd")));
            }
        }
        Ok(())
    }
}

/// Foreground classes whose attention-guided video score reaches `gate`.
pub fn gate_classes(p_attn: &[f64], gate: f64) -> Vec<usize> {
    let c = p_attn.len().saturating_sub(1);
    (0..c).filter(|&j| p_attn[j] >= gate).collect()
}

/// Maximal runs with `attn[i] >= threshold`, as half-open intervals.
pub fn connected_components(attn: &[f64], threshold: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &a) in attn.iter().enumerate() {
        match (a >= threshold, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, attn.len()));
    }
    out
}

/// Flank length on each side of `[t_s, t_e)`: a quarter of the length,
/// rounded half up, at least 1.
pub fn outer_margin(t_s: usize, t_e: usize) -> usize {
    ((t_e - t_s + 2) / 4).max(1)
}

/// Inner mean minus flank mean plus `zeta * p_attn_c`.
pub fn outer_inner_score(cas_attn_c: &[f64], t_s: usize, t_e: usize, p_attn_c: f64, zeta: f64) -> f64 {
    let t_len = cas_attn_c.len();
    debug_assert!(t_s < t_e && t_e <= t_len);
    let inner = mean(&cas_attn_c[t_s..t_e]);
    let l_m = outer_margin(t_s, t_e);
    let left = &cas_attn_c[t_s.saturating_sub(l_m)..t_s];
    let right = &cas_attn_c[t_e..(t_e + l_m).min(t_len)];
    let n = left.len() + right.len();
    let outer = if n == 0 {
        0.0
    } else {
        (left.iter().sum::<f64>() + right.iter().sum::<f64>()) / n as f64
    };
    inner - outer + zeta * p_attn_c
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Centered moving average; windows are truncated at the edges.
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..xs.len())
        .map(|i| mean(&xs[i.saturating_sub(half)..(i + half + 1).min(xs.len())]))
        .collect()
}

pub fn interval_iou(a: (usize, usize), b: (usize, usize)) -> f64 {
    let inter = a.1.min(b.1).saturating_sub(a.0.max(b.0));
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Descending score, then earlier start, then earlier end.
pub fn rank_order(a: &Proposal, b: &Proposal) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.t_start.cmp(&b.t_start))
        .then(a.t_end.cmp(&b.t_end))
}

/// Greedy non-maximum suppression within one class.
pub fn nms(proposals: &[Proposal], iou_threshold: f64) -> Result<Vec<Proposal>> {
    if let Some(first) = proposals.first() {
        if proposals.iter().any(|p| p.class_id != first.class_id) {
            return Err(Error::invalid("nms: proposals span more than one class"));
        }
    }
    let mut sorted = proposals.to_vec();
    sorted.sort_by(rank_order);
    let mut kept: Vec<Proposal> = Vec::new();
    for p in sorted {
        let suppressed = kept
            .iter()
            .any(|k| interval_iou((k.t_start, k.t_end), (p.t_start, p.t_end)) >= iou_threshold);
        if !suppressed {
            kept.push(p);
        }
    }
    Ok(kept)
}

/// Scored proposals for one gated class before suppression, pooled over
/// every threshold.
pub fn class_candidates(output: &ModelOutput, class_id: usize, config: &LocalizationConfig) -> Vec<Proposal> {
    let column = output.cas_attn.column(class_id);
    let cas = match config.smooth_window {
        Some(w) if w > 1 => moving_average(&column, w),
        _ => column,
    };
    let p_c = output.p_attn[class_id];
    let mut pooled = Vec::new();
    for &thr in &config.proposal_thresholds {
        for (t_start, t_end) in connected_components(&output.attn, thr) {
            pooled.push(Proposal {
                t_start,
                t_end,
                class_id,
                score: outer_inner_score(&cas, t_start, t_end, p_c, config.zeta),
            });
        }
    }
    pooled
}

/// Proposals for one video: class gating, multi-threshold components of the
/// soft attention, outer-inner scoring on the class's attention-guided CAS,
/// then per-class NMS. Classes appear in ascending order, each sorted by
/// descending score.
pub fn localize(output: &ModelOutput, config: &LocalizationConfig) -> Vec<Proposal> {
    let mut out = Vec::new();
    for class_id in gate_classes(&output.p_attn, config.class_gate) {
        let pooled = class_candidates(output, class_id, config);
        out.extend(nms(&pooled, config.nms_iou).expect("single class"));
    }
    out
}

/// A proposal tagged with its video, as exported and evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub video_id: String,
    pub t_start: usize,
    pub t_end: usize,
    pub class_id: usize,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_start_seconds: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end_seconds: Option<f64>,
}

impl Detection {
    pub fn new(video_id: &str, p: &Proposal, fps: Option<f64>) -> Self {
        let secs = |t: usize| fps.map(|f| t as f64 * SNIPPET_FRAMES / f);
        Self {
            video_id: video_id.to_string(),
            t_start: p.t_start,
            t_end: p.t_end,
            class_id: p.class_id,
            score: p.score,
            t_start_seconds: secs(p.t_start),
            t_end_seconds: secs(p.t_end),
        }
    }

    pub fn interval(&self) -> (usize, usize) {
        (self.t_start, self.t_end)
    }
}

/// One JSON object per line.
pub fn detections_to_jsonl(dets: &[Detection]) -> String {
    let mut s = String::new();
    for d in dets {
        s.push_str(&serde_json::to_string(d).expect("detection serializes"));
        s.push('\n');
    }
    s
}

pub fn detections_from_jsonl(text: &str, path: &std::path::Path) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let body = line.trim();
        if !body.is_empty() {
            let d: Detection = serde_json::from_str(body).map_err(|e| {
                Error::format(path, offset + e.column().saturating_sub(1) as u64, format!("proposal line: {e}"))
            })?;
            if d.t_start >= d.t_end {
                return Err(Error::format(path, offset, format!("empty interval [{}, {})", d.t_start, d.t_end)));
            }
            out.push(d);
        }
        offset += line.len() as u64;
    }
    Ok(out)
}
