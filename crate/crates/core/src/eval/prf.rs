use super::MatchResult;
use crate::error::{Error, Result};

/// Precision, recall and F1 at one score threshold. A metric whose
/// denominator is zero is reported as 0 with its flag cleared.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision_defined: bool,
    pub recall_defined: bool,
}

pub fn prf_from_counts(tp: usize, fp: usize, fn_: usize) -> Prf {
    let precision_defined = tp + fp > 0;
    let recall_defined = tp + fn_ > 0;
    let precision = if precision_defined {
        tp as f64 / (tp + fp) as f64
    } else {
        0.0
    };
    let recall = if recall_defined {
        tp as f64 / (tp + fn_) as f64
    } else {
        0.0
    };
    let f1 = harmonic_mean(precision, recall);
    Prf {
        precision,
        recall,
        f1,
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
        precision_defined,
        recall_defined,
    }
}

pub fn harmonic_mean(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Dataset-level counts over detections scoring at least `score_threshold`.
pub fn compute_prf(matches: &[MatchResult], score_threshold: f64) -> Prf {
    let mut tp = 0;
    let mut fp = 0;
    let mut gt = 0;
    for m in matches {
        gt += m.num_ground_truth();
        for (score, is_tp) in m.scored_outcomes() {
            if score >= score_threshold {
                if is_tp {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
    }
    prf_from_counts(tp, fp, gt - tp)
}

/// Mean IoU over true positives scoring at least `score_threshold`.
pub fn compute_miou(matches: &[MatchResult], score_threshold: f64) -> Result<f64> {
    let ious: Vec<f64> = matches
        .iter()
        .flat_map(|m| &m.true_positives)
        .filter(|t| t.detection.score >= score_threshold)
        .map(|t| t.iou)
        .collect();
    if ious.is_empty() {
        return Err(Error::UndefinedMetric(
            "mIoU needs at least one true positive".into(),
        ));
    }
    Ok(ious.iter().sum::<f64>() / ious.len() as f64)
}
