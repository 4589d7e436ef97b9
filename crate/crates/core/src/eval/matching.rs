use std::cmp::Ordering;

use crate::geometry::{BBox, ScoredBox};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruePositive {
    pub detection: ScoredBox,
    pub gt_index: usize,
    pub iou: f64,
}

/// Outcome of matching one image's detections against its ground truth.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchResult {
    pub true_positives: Vec<TruePositive>,
    pub false_positives: Vec<ScoredBox>,
    /// Indices of unmatched ground truths.
    pub false_negatives: Vec<usize>,
}

impl MatchResult {
    pub fn num_ground_truth(&self) -> usize {
        self.true_positives.len() + self.false_negatives.len()
    }

    /// `(score, is_true_positive)` for every detection.
    pub fn scored_outcomes(&self) -> impl Iterator<Item = (f64, bool)> + '_ {
        self.true_positives
            .iter()
            .map(|t| (t.detection.score, true))
            .chain(self.false_positives.iter().map(|d| (d.score, false)))
    }
}

/// Greedy matching in descending score order (ties by input index): each
/// detection takes the highest-IoU ground truth that is still unmatched,
/// provided that IoU reaches `iou_threshold`.
///
/// Because the greedy pass is order-driven, matching only the detections
/// above some score gives exactly the prefix of this result.
pub fn match_detections(
    detections: &[ScoredBox],
    ground_truths: &[BBox],
    iou_threshold: f64,
) -> MatchResult {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .score
            .partial_cmp(&detections[a].score)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut taken = vec![false; ground_truths.len()];
    let mut result = MatchResult::default();
    for i in order {
        let det = detections[i];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in ground_truths.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let v = det.bbox.iou(gt);
            if v >= iou_threshold && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((g, v));
            }
        }
        match best {
            Some((g, v)) => {
                taken[g] = true;
                result.true_positives.push(TruePositive {
                    detection: det,
                    gt_index: g,
                    iou: v,
                });
            }
            None => result.false_positives.push(det),
        }
    }
    result.false_negatives = (0..ground_truths.len()).filter(|&g| !taken[g]).collect();
    result
}
