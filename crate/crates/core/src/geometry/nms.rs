use std::cmp::Ordering;

use super::ScoredBox;

/// Indices kept by greedy NMS, in descending score order.
///
/// Equal scores are ordered by lower original index. A candidate is
/// suppressed when its IoU with an already kept box exceeds `iou_threshold`.
pub fn nms_indices(candidates: &[ScoredBox], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        candidates[b]
            .score
            .partial_cmp(&candidates[a].score)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut keep: Vec<usize> = Vec::new();
    for idx in order {
        let bbox = &candidates[idx].bbox;
        if keep
            .iter()
            .all(|&k| candidates[k].bbox.iou(bbox) <= iou_threshold)
        {
            keep.push(idx);
        }
    }
    keep
}

pub fn nms(candidates: &[ScoredBox], iou_threshold: f64) -> Vec<ScoredBox> {
    nms_indices(candidates, iou_threshold)
        .into_iter()
        .map(|i| candidates[i])
        .collect()
}
