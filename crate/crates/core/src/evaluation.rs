//! Detection mAP at temporal IoU thresholds and video-level classification
//! mAP.

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::localization::{interval_iou, Detection};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthSegment {
    pub video_id: String,
    pub t_start: usize,
    pub t_end: usize,
    pub class_id: usize,
}

impl GroundTruthSegment {
    pub fn interval(&self) -> (usize, usize) {
        (self.t_start, self.t_end)
    }
}

pub fn temporal_iou(a: (usize, usize), b: (usize, usize)) -> f64 {
    interval_iou(a, b)
}

/// IoU 0.1 to 0.7 in steps of 0.1.
pub fn default_iou_thresholds() -> Vec<f64> {
    (1..=7).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApResult {
    pub value: f64,
    /// Set when there was no ground truth; `value` is then 0.
    pub no_ground_truth: bool,
}

/// Interpolated average precision for one class across all videos.
///
/// Predictions are ranked by descending score (stable). Each one matches the
/// unmatched ground truth in its video with the highest IoU at or above
/// `iou_thr`, lower start winning ties.
pub fn average_precision(predictions: &[Detection], gt: &[GroundTruthSegment], iou_thr: f64) -> ApResult {
    if gt.is_empty() {
        return ApResult {
            value: 0.0,
            no_ground_truth: true,
        };
    }
    let mut by_video: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, g) in gt.iter().enumerate() {
        by_video.entry(g.video_id.as_str()).or_default().push(i);
    }
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| predictions[b].score.total_cmp(&predictions[a].score));

    let mut locked = vec![false; gt.len()];
    let mut tp = Vec::with_capacity(order.len());
    for &pi in &order {
        let p = &predictions[pi];
        let mut best: Option<(f64, usize)> = None;
        for &gi in by_video.get(p.video_id.as_str()).map(Vec::as_slice).unwrap_or(&[]) {
            if locked[gi] {
                continue;
            }
            let iou = temporal_iou(p.interval(), gt[gi].interval());
            if iou < iou_thr {
                continue;
            }
            let better = match best {
                None => true,
                Some((b_iou, b)) => iou > b_iou || (iou == b_iou && gt[gi].t_start < gt[b].t_start),
            };
            if better {
                best = Some((iou, gi));
            }
        }
        if let Some((_, gi)) = best {
            locked[gi] = true;
        }
        tp.push(best.is_some());
    }

    let npos = gt.len() as f64;
    let mut precision = Vec::with_capacity(tp.len());
    let mut recall = Vec::with_capacity(tp.len());
    let (mut hits, mut seen) = (0.0, 0.0);
    for &hit in &tp {
        seen += 1.0;
        if hit {
            hits += 1.0;
        }
        precision.push(hits / seen);
        recall.push(hits / npos);
    }
    ApResult {
        value: interpolated_ap(&precision, &recall),
        no_ground_truth: false,
    }
}

/// Area under the monotone precision envelope.
fn interpolated_ap(precision: &[f64], recall: &[f64]) -> f64 {
    let mut mprec = Vec::with_capacity(precision.len() + 2);
    mprec.push(0.0);
    mprec.extend_from_slice(precision);
    mprec.push(0.0);
    let mut mrec = Vec::with_capacity(recall.len() + 2);
    mrec.push(0.0);
    mrec.extend_from_slice(recall);
    mrec.push(1.0);
    for i in (0..mprec.len() - 1).rev() {
        mprec[i] = mprec[i].max(mprec[i + 1]);
    }
    (1..mrec.len())
        .filter(|&i| mrec[i] != mrec[i - 1])
        .map(|i| (mrec[i] - mrec[i - 1]) * mprec[i])
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class_id: usize,
    pub has_ground_truth: bool,
    /// One AP per IoU threshold.
    pub ap: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou_thresholds: Vec<f64>,
    pub per_class_ap: Vec<ClassAp>,
    /// One mAP per IoU threshold.
    pub map_at: Vec<f64>,
    pub avg_map: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classification_map: Option<f64>,
}

impl EvalReport {
    pub fn map_at_iou(&self, iou: f64) -> Option<f64> {
        self.iou_thresholds
            .iter()
            .position(|&t| (t - iou).abs() < 1e-9)
            .map(|i| self.map_at[i])
    }

    /// Rows are IoU thresholds; columns are classes followed by mAP. Classes
    /// without ground truth have empty cells.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iou");
        for c in &self.per_class_ap {
            write!(s, ",class_{}", c.class_id).unwrap();
        }
        s.push_str(",mAP\n");
        for (ti, t) in self.iou_thresholds.iter().enumerate() {
            write!(s, "{t}").unwrap();
            for c in &self.per_class_ap {
                if c.has_ground_truth {
                    write!(s, ",{}", c.ap[ti]).unwrap();
                } else {
                    s.push(',');
                }
            }
            writeln!(s, ",{}", self.map_at[ti]).unwrap();
        }
        s
    }
}

/// Per-class AP at every threshold; mAP over classes with ground truth.
pub fn evaluate(
    predictions: &[Detection],
    gt: &[GroundTruthSegment],
    iou_thresholds: &[f64],
    num_classes: usize,
) -> EvalReport {
    let per_class_ap: Vec<ClassAp> = (0..num_classes)
        .into_par_iter()
        .map(|class_id| {
            let preds: Vec<Detection> = predictions.iter().filter(|p| p.class_id == class_id).cloned().collect();
            let gts: Vec<GroundTruthSegment> = gt.iter().filter(|g| g.class_id == class_id).cloned().collect();
            ClassAp {
                class_id,
                has_ground_truth: !gts.is_empty(),
                ap: iou_thresholds
                    .iter()
                    .map(|&t| average_precision(&preds, &gts, t).value)
                    .collect(),
            }
        })
        .collect();
    let scored: Vec<&ClassAp> = per_class_ap.iter().filter(|c| c.has_ground_truth).collect();
    let map_at: Vec<f64> = (0..iou_thresholds.len())
        .map(|ti| {
            if scored.is_empty() {
                0.0
            } else {
                scored.iter().map(|c| c.ap[ti]).sum::<f64>() / scored.len() as f64
            }
        })
        .collect();
    let avg_map = if map_at.is_empty() {
        0.0
    } else {
        map_at.iter().sum::<f64>() / map_at.len() as f64
    };
    EvalReport {
        iou_thresholds: iou_thresholds.to_vec(),
        per_class_ap,
        map_at,
        avg_map,
        classification_map: None,
    }
}

/// Mean over classes of non-interpolated AP, ranking videos by their score
/// for the class (stable for ties). Classes with no positive video are
/// skipped; `scores[v]` may include a trailing background entry, which is
/// ignored.
pub fn classification_map(scores: &[Vec<f64>], labels: &[Vec<usize>], num_classes: usize) -> f64 {
    let mut aps = Vec::new();
    for c in 0..num_classes {
        let positives = labels.iter().filter(|l| l.contains(&c)).count();
        if positives == 0 {
            continue;
        }
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b][c].total_cmp(&scores[a][c]));
        let (mut hits, mut sum) = (0.0, 0.0);
        for (rank, &v) in order.iter().enumerate() {
            if labels[v].contains(&c) {
                hits += 1.0;
                sum += hits / (rank + 1) as f64;
            }
        }
        aps.push(sum / positives as f64);
    }
    if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    }
}

/// Mean over ground-truth segments of the fraction of their snippets covered
/// by same-class proposals in the same video with IoU at or above `iou_thr`.
pub fn segment_coverage(predictions: &[Detection], gt: &[GroundTruthSegment], iou_thr: f64) -> f64 {
    if gt.is_empty() {
        return 0.0;
    }
    let total: f64 = gt
        .iter()
        .map(|g| {
            let mut covered = vec![false; g.t_end - g.t_start];
            for p in predictions {
                if p.video_id == g.video_id
                    && p.class_id == g.class_id
                    && temporal_iou(p.interval(), g.interval()) >= iou_thr
                {
                    for t in p.t_start.max(g.t_start)..p.t_end.min(g.t_end) {
                        covered[t - g.t_start] = true;
                    }
                }
            }
            covered.iter().filter(|&&c| c).count() as f64 / covered.len() as f64
        })
        .sum();
    total / gt.len() as f64
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn det(video: &str, s: usize, e: usize, class_id: usize, score: f64) -> Detection {
        Detection {
            video_id: video.into(),
            t_start: s,
            t_end: e,
            class_id,
            score,
            t_start_seconds: None,
            t_end_seconds: None,
        }
    }

    fn seg(video: &str, s: usize, e: usize, class_id: usize) -> GroundTruthSegment {
        GroundTruthSegment {
            video_id: video.into(),
            t_start: s,
            t_end: e,
            class_id,
        }
    }

    /// Rank-by-rank reimplementation: every true positive contributes the
    /// best precision at or after its rank.
    fn reference_ap(preds: &[Detection], gt: &[GroundTruthSegment], thr: f64) -> f64 {
        let mut ranked: Vec<(usize, &Detection)> = preds.iter().enumerate().collect();
        ranked.sort_by(|a, b| b.1.score.partial_cmp(&a.1.score).unwrap().then(a.0.cmp(&b.0)));
        let mut used = vec![false; gt.len()];
        let mut hits = Vec::new();
        for (_, p) in &ranked {
            let cand = (0..gt.len())
                .filter(|&j| !used[j] && gt[j].video_id == p.video_id)
                .map(|j| {
                    let inter = p.t_end.min(gt[j].t_end) as f64 - p.t_start.max(gt[j].t_start) as f64;
                    let inter = inter.max(0.0);
                    let union = (p.t_end - p.t_start + gt[j].t_end - gt[j].t_start) as f64 - inter;
                    (inter / union, j)
                })
                .filter(|&(iou, _)| iou >= thr)
                .max_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(gt[b.1].t_start.cmp(&gt[a.1].t_start)));
            if let Some((_, j)) = cand {
                used[j] = true;
            }
            hits.push(cand.is_some());
        }
        let prec: Vec<f64> = (0..hits.len())
            .map(|r| hits[..=r].iter().filter(|&&h| h).count() as f64 / (r + 1) as f64)
            .collect();
        let mut ap = 0.0;
        for r in 0..hits.len() {
            if hits[r] {
                ap += prec[r..].iter().cloned().fold(0.0, f64::max);
            }
        }
        ap / gt.len() as f64
    }

    fn random_case(rng: &mut ChaCha8Rng) -> (Vec<Detection>, Vec<GroundTruthSegment>) {
        let videos = ["a", "b", "c"];
        let gt = (0..rng.random_range(1..6))
            .map(|_| {
                let s = rng.random_range(0..30);
                seg(videos[rng.random_range(0..3)], s, s + rng.random_range(1..10), 0)
            })
            .collect();
        let preds = (0..rng.random_range(0..12))
            .map(|_| {
                let s = rng.random_range(0..30);
                let score = rng.random_range(0..8) as f64 / 8.0;
                det(videos[rng.random_range(0..3)], s, s + rng.random_range(1..10), 0, score)
            })
            .collect();
        (preds, gt)
    }

    #[test]
    fn iou_examples() {
        assert!((temporal_iou((0, 10), (5, 15)) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(temporal_iou((2, 7), (2, 7)), 1.0);
        assert_eq!(temporal_iou((0, 3), (3, 6)), 0.0);
    }

    #[test]
    fn ap_examples() {
        let gt = vec![seg("a", 2, 8, 0)];
        assert_eq!(average_precision(&[det("a", 2, 8, 0, 0.5)], &gt, 0.5).value, 1.0);
        assert_eq!(average_precision(&[det("a", 10, 12, 0, 0.5)], &gt, 0.1).value, 0.0);
        assert_eq!(average_precision(&[det("b", 2, 8, 0, 0.5)], &gt, 0.1).value, 0.0);
        assert_eq!(average_precision(&[], &gt, 0.5).value, 0.0);
        let r = average_precision(&[det("a", 2, 8, 0, 0.5)], &[], 0.5);
        assert!(r.no_ground_truth && r.value == 0.0);
    }

    #[test]
    fn ap_tie_prefers_lower_start() {
        let gt = vec![seg("a", 6, 10, 0), seg("a", 2, 6, 0)];
        let preds = vec![det("a", 4, 8, 0, 0.9), det("a", 6, 10, 0, 0.8)];
        // First prediction ties (IoU 1/3 each) and takes [2,6); the second
        // then matches [6,10) exactly.
        assert_eq!(average_precision(&preds, &gt, 0.3).value, 1.0);
        let swapped = vec![det("a", 4, 8, 0, 0.9), det("a", 2, 6, 0, 0.8)];
        assert!(average_precision(&swapped, &gt, 0.3).value < 1.0);
    }

    #[test]
    fn ap_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let (preds, gt) = random_case(&mut rng);
            for thr in [0.1, 0.3, 0.5, 0.7] {
                let a = average_precision(&preds, &gt, thr).value;
                let b = reference_ap(&preds, &gt, thr);
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn evaluate_perfect_and_empty() {
        let gt = vec![seg("a", 0, 4, 0), seg("a", 8, 12, 1), seg("b", 3, 9, 1)];
        let perfect: Vec<Detection> = gt.iter().map(|g| det(&g.video_id, g.t_start, g.t_end, g.class_id, 1.0)).collect();
        let th = default_iou_thresholds();
        let r = evaluate(&perfect, &gt, &th, 3);
        assert!(r.map_at.iter().all(|&m| m == 1.0));
        assert_eq!(r.avg_map, 1.0);
        assert!(!r.per_class_ap[2].has_ground_truth);
        let e = evaluate(&[], &gt, &th, 3);
        assert_eq!(e.avg_map, 0.0);
        let csv = r.to_csv();
        assert_eq!(csv.lines().next().unwrap(), "iou,class_0,class_1,class_2,mAP");
        assert_eq!(csv.lines().count(), 8);
        assert_eq!(csv.lines().nth(1).unwrap(), "0.1,1,1,,1");
        assert_eq!(r.map_at_iou(0.5), Some(1.0));
    }

    #[test]
    fn classification_examples() {
        let labels = vec![vec![0], vec![1], vec![0, 1]];
        let exact = vec![vec![1.0, 0.0, 0.5], vec![0.0, 1.0, 0.5], vec![1.0, 1.0, 0.5]];
        assert_eq!(classification_map(&exact, &labels, 2), 1.0);
        let anti = vec![vec![0.1], vec![0.9]];
        assert_eq!(classification_map(&anti, &[vec![0], vec![]], 1), 0.5);
    }

    #[test]
    fn classification_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let n = rng.random_range(1..10);
            let scores: Vec<Vec<f64>> = (0..n).map(|_| (0..4).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
            let labels: Vec<Vec<usize>> = (0..n).map(|_| (0..3).filter(|_| rng.random_bool(0.4)).collect()).collect();
            // Reference: precision at each positive counts the videos scored at least as high.
            let mut aps = Vec::new();
            for c in 0..3 {
                let pos: Vec<usize> = (0..n).filter(|&v| labels[v].contains(&c)).collect();
                if pos.is_empty() {
                    continue;
                }
                let ap: f64 = pos
                    .iter()
                    .map(|&v| {
                        let above = (0..n).filter(|&u| scores[u][c] >= scores[v][c]).count() as f64;
                        let pos_above = pos.iter().filter(|&&u| scores[u][c] >= scores[v][c]).count() as f64;
                        pos_above / above
                    })
                    .sum::<f64>()
                    / pos.len() as f64;
                aps.push(ap);
            }
            let expect = if aps.is_empty() { 0.0 } else { aps.iter().sum::<f64>() / aps.len() as f64 };
            assert!((classification_map(&scores, &labels, 3) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn coverage_examples() {
        let gt = vec![seg("a", 0, 10, 0), seg("a", 20, 30, 1)];
        let preds = vec![det("a", 0, 6, 0, 0.5), det("a", 20, 30, 0, 0.9)];
        assert!((segment_coverage(&preds, &gt, 0.5) - 0.3).abs() < 1e-12);
        assert_eq!(segment_coverage(&preds, &gt, 0.7), 0.0);
    }

    proptest! {
        #[test]
        fn ap_invariant_under_monotone_transform(seed in any::<u64>(), thr in 0.1f64..0.9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (preds, gt) = random_case(&mut rng);
            let moved: Vec<Detection> = preds.iter().map(|p| Detection { score: (3.0 * p.score).exp() - 7.0, ..p.clone() }).collect();
            prop_assert_eq!(average_precision(&preds, &gt, thr).value, average_precision(&moved, &gt, thr).value);
        }

        #[test]
        fn duplicate_true_positive_never_helps(seed in any::<u64>(), thr in 0.1f64..0.9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (mut preds, mut gt) = random_case(&mut rng);
            // Ground truth never overlaps within a video; otherwise the
            // displaced duplicate could legitimately match a neighbour.
            let mut kept: Vec<GroundTruthSegment> = Vec::new();
            for g in gt.drain(..) {
                if kept.iter().all(|k| k.video_id != g.video_id || temporal_iou(k.interval(), g.interval()) == 0.0) {
                    kept.push(g);
                }
            }
            let gt = kept;
            let g = &gt[0];
            preds.push(det(&g.video_id, g.t_start, g.t_end, 0, 2.0));
            let base = average_precision(&preds, &gt, thr).value;
            let score = rng.random_range(0.0..2.5);
            preds.push(det(&g.video_id, g.t_start, g.t_end, 0, score));
            prop_assert!(average_precision(&preds, &gt, thr).value <= base + 1e-15);
        }

        #[test]
        fn map_invariant_to_class_permutation(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut preds = Vec::new();
            let mut gt = Vec::new();
            for c in 0..3 {
                let (p, g) = random_case(&mut rng);
                preds.extend(p.into_iter().map(|d| Detection { class_id: c, ..d }));
                gt.extend(g.into_iter().map(|s| GroundTruthSegment { class_id: c, ..s }));
            }
            let perm = [2usize, 0, 1];
            let pp: Vec<Detection> = preds.iter().map(|d| Detection { class_id: perm[d.class_id], ..d.clone() }).collect();
            let pg: Vec<GroundTruthSegment> = gt.iter().map(|s| GroundTruthSegment { class_id: perm[s.class_id], ..s.clone() }).collect();
            let th = default_iou_thresholds();
            let a = evaluate(&preds, &gt, &th, 3);
            let b = evaluate(&pp, &pg, &th, 3);
            for (x, y) in a.map_at.iter().zip(&b.map_at) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            let mean = a.map_at.iter().sum::<f64>() / a.map_at.len() as f64;
            prop_assert!((a.avg_map - mean).abs() < 1e-12);
            prop_assert!(a.map_at.iter().all(|m| (0.0..=1.0).contains(m)));
        }
    }
}
