use rand::seq::SliceRandom;
use rand::Rng;

use super::DetectorConfig;
use crate::error::Result;
use crate::geometry::{encode, BBox, BoxDelta};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorLabel {
    Positive,
    Negative,
    Ignore,
}

/// Positive anchor with its matched ground truth and regression target `t*`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorMatch {
    pub anchor: usize,
    pub gt: usize,
    pub target: BoxDelta,
}

/// Per-anchor labels `p*` plus matches for the positive anchors, sorted by
/// anchor index. Only positives carry targets, so they are stored sparsely.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorTargetAssignment {
    pub labels: Vec<AnchorLabel>,
    pub matches: Vec<AnchorMatch>,
}

impl AnchorTargetAssignment {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn count(&self, label: AnchorLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    fn find(&self, anchor: usize) -> Option<&AnchorMatch> {
        self.matches
            .binary_search_by_key(&anchor, |m| m.anchor)
            .ok()
            .map(|i| &self.matches[i])
    }

    pub fn target(&self, anchor: usize) -> Option<BoxDelta> {
        self.find(anchor).map(|m| m.target)
    }

    pub fn matched_gt(&self, anchor: usize) -> Option<usize> {
        self.find(anchor).map(|m| m.gt)
    }

    pub fn sampled(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l != AnchorLabel::Ignore)
            .map(|(i, _)| i)
    }
}

/// Threshold and argmax labelling before any subsampling.
pub fn label_anchors(
    anchors: &[BBox],
    ground_truth: &[BBox],
    config: &DetectorConfig,
) -> Result<AnchorTargetAssignment> {
    for gt in ground_truth {
        gt.validate()?;
    }
    let n = anchors.len();
    let mut best_iou = vec![0.0f64; n];
    let mut best_gt: Vec<Option<usize>> = vec![None; n];
    let mut gt_best = vec![0.0f64; ground_truth.len()];
    let mut overlaps: Vec<(usize, usize, f64)> = Vec::new();
    // Pairwise IoU only needs to be evaluated where the boxes can overlap.
    for (g, gt) in ground_truth.iter().enumerate() {
        for (a, anchor) in anchors.iter().enumerate() {
            if anchor.x_max <= gt.x_min
                || anchor.x_min >= gt.x_max
                || anchor.y_max <= gt.y_min
                || anchor.y_min >= gt.y_max
            {
                continue;
            }
            let v = anchor.iou(gt);
            overlaps.push((g, a, v));
            if v > best_iou[a] {
                best_iou[a] = v;
                best_gt[a] = Some(g);
            }
            if v > gt_best[g] {
                gt_best[g] = v;
            }
        }
    }
    let mut labels: Vec<AnchorLabel> = best_iou
        .iter()
        .map(|&v| {
            if v >= config.rpn_positive_iou {
                AnchorLabel::Positive
            } else if v < config.rpn_negative_iou {
                AnchorLabel::Negative
            } else {
                AnchorLabel::Ignore
            }
        })
        .collect();
    // Every ground truth keeps its best anchor(s), whatever the threshold says.
    for &(g, a, v) in &overlaps {
        if v > 0.0 && v == gt_best[g] {
            labels[a] = AnchorLabel::Positive;
            if best_gt[a] != Some(g) && best_iou[a] <= gt_best[g] {
                best_gt[a] = Some(g);
            }
        }
    }
    let mut matches = Vec::new();
    for a in 0..n {
        if labels[a] == AnchorLabel::Positive {
            let g = best_gt[a].expect("positive anchor has a match");
            matches.push(AnchorMatch {
                anchor: a,
                gt: g,
                target: encode(&anchors[a], &ground_truth[g])?,
            });
        }
    }
    Ok(AnchorTargetAssignment { labels, matches })
}

/// Random subsampling down to `rpn_batch_size` anchors with at most
/// `rpn_positive_fraction` of them positive. Unsampled anchors become ignored.
pub fn sample_anchor_targets(
    labelled: &AnchorTargetAssignment,
    config: &DetectorConfig,
    rng: &mut impl Rng,
) -> AnchorTargetAssignment {
    let mut out = labelled.clone();
    let mut pos: Vec<usize> = Vec::new();
    let mut neg: Vec<usize> = Vec::new();
    for (i, l) in labelled.labels.iter().enumerate() {
        match l {
            AnchorLabel::Positive => pos.push(i),
            AnchorLabel::Negative => neg.push(i),
            AnchorLabel::Ignore => {}
        }
    }
    let max_pos = (config.rpn_batch_size as f64 * config.rpn_positive_fraction) as usize;
    if pos.len() > max_pos {
        pos.shuffle(rng);
        for &i in &pos[max_pos..] {
            out.labels[i] = AnchorLabel::Ignore;
        }
        let labels = &out.labels;
        out.matches
            .retain(|m| labels[m.anchor] == AnchorLabel::Positive);
        pos.truncate(max_pos);
    }
    let max_neg = config.rpn_batch_size - pos.len();
    if neg.len() > max_neg {
        neg.shuffle(rng);
        for &i in &neg[max_neg..] {
            out.labels[i] = AnchorLabel::Ignore;
        }
    }
    out
}

pub fn assign_anchor_targets(
    anchors: &[BBox],
    ground_truth: &[BBox],
    config: &DetectorConfig,
    rng: &mut impl Rng,
) -> Result<AnchorTargetAssignment> {
    let labelled = label_anchors(anchors, ground_truth, config)?;
    Ok(sample_anchor_targets(&labelled, config, rng))
}
