//! Detection quality metrics and stage timing.

mod ap;
mod matching;
mod prf;
mod report;
mod timing;

pub use ap::{compute_ap, pr_curve, ApResult, PrCurve, PrPoint};
pub use matching::{match_detections, MatchResult, TruePositive};
pub use prf::{compute_miou, compute_prf, harmonic_mean, prf_from_counts, Prf};
pub use report::{
    export_report, parse_metrics, parse_pr_csv, render_metrics, render_pr_csv, EvalReport,
    MetricsBlock, ReportEntry, TimingBlock,
};
pub use timing::{timing_harness, StageSample, TimingReport};

use crate::error::Result;
use crate::geometry::{BBox, ScoredBox};

/// Per-image detections paired with that image's ground truth.
pub struct ImageEval<'a> {
    pub detections: &'a [ScoredBox],
    pub ground_truth: &'a [BBox],
}

/// Full report for one dataset: AP over all detections, the other metrics at
/// `score_threshold`. An undefined mIoU (no true positives) is reported as 0.
pub fn evaluate(
    dataset: &str,
    images: &[ImageEval<'_>],
    iou_threshold: f64,
    score_threshold: f64,
) -> Result<(EvalReport, PrCurve)> {
    let matches: Vec<MatchResult> = images
        .iter()
        .map(|im| match_detections(im.detections, im.ground_truth, iou_threshold))
        .collect();
    let ap = compute_ap(&matches)?;
    let prf = compute_prf(&matches, score_threshold);
    let miou = compute_miou(&matches, score_threshold).unwrap_or(0.0);
    Ok((
        EvalReport {
            dataset: dataset.to_string(),
            iou_threshold,
            score_threshold,
            ap: ap.ap,
            miou,
            precision: prf.precision,
            recall: prf.recall,
            f1: prf.f1,
        },
        ap.curve,
    ))
}
