use std::cmp::Ordering;

use super::MatchResult;
use crate::error::{Error, Result};

/// One operating point of the precision/recall sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

/// Operating points in order of decreasing score threshold.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApResult {
    pub ap: f64,
    pub curve: PrCurve,
}

/// Sweeps every distinct detection score as a threshold over the whole
/// dataset. Detections sharing a score enter the sweep together.
pub fn pr_curve(matches: &[MatchResult]) -> Result<PrCurve> {
    let total_gt: usize = matches.iter().map(MatchResult::num_ground_truth).sum();
    if total_gt == 0 {
        return Err(Error::UndefinedMetric(
            "precision/recall need at least one ground truth".into(),
        ));
    }
    let mut outcomes: Vec<(f64, bool)> = matches.iter().flat_map(|m| m.scored_outcomes()).collect();
    outcomes.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < outcomes.len() {
        let threshold = outcomes[i].0;
        while i < outcomes.len() && outcomes[i].0 == threshold {
            if outcomes[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(PrPoint {
            threshold,
            recall: tp as f64 / total_gt as f64,
            precision: tp as f64 / (tp + fp) as f64,
        });
    }
    Ok(PrCurve { points })
}

/// All-point interpolated average precision: the area under the running
/// maximum of precision taken from the high-recall end.
pub fn compute_ap(matches: &[MatchResult]) -> Result<ApResult> {
    let curve = pr_curve(matches)?;
    let mut envelope: Vec<f64> = curve.points.iter().map(|p| p.precision).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, env) in curve.points.iter().zip(&envelope) {
        ap += (p.recall - prev_recall) * env;
        prev_recall = p.recall;
    }
    Ok(ApResult { ap, curve })
}
