use std::cmp::Ordering;

use super::{AnchorLabel, AnchorTargetAssignment};
use crate::error::{Error, Result};
use crate::geometry::{clip_to_bounds, decode, BBox, BoxDelta, ScoredBox};

const PROB_EPS: f64 = 1e-7;

/// Normalisers and weight of the two-term proposal loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RpnLossWeights {
    pub lambda: f64,
    pub n_cls: f64,
    pub n_reg: f64,
}

/// Per-anchor objectness probabilities `p_i` and box offsets `t_i`.
#[derive(Debug, Clone, Copy)]
pub struct RpnPredictions<'a> {
    pub objectness: &'a [f64],
    pub deltas: &'a [BoxDelta],
}

#[derive(Debug, Clone)]
pub struct RpnLossOutput {
    pub total: f64,
    pub classification: f64,
    pub regression: f64,
    /// Gradient with respect to the pre-sigmoid objectness logit of each anchor.
    pub grad_logits: Vec<f64>,
    /// Gradient with respect to each anchor's `t_i`.
    pub grad_deltas: Vec<[f64; 4]>,
}

/// `1/N_cls * sum BCE(p_i, p_i*) + lambda/N_reg * sum p_i* smoothL1(t_i - t_i*)`
/// over the sampled (non-ignored) anchors.
pub fn rpn_loss(
    predictions: RpnPredictions<'_>,
    assignment: &AnchorTargetAssignment,
    weights: RpnLossWeights,
) -> Result<RpnLossOutput> {
    let n = assignment.len();
    if predictions.objectness.len() != n || predictions.deltas.len() != n {
        return Err(Error::Shape(format!(
            "{} objectness / {} deltas for {n} anchors",
            predictions.objectness.len(),
            predictions.deltas.len()
        )));
    }
    if assignment.sampled().next().is_none() {
        return Err(Error::InvalidInput(
            "degenerate batch: no sampled anchors".into(),
        ));
    }
    let mut cls = 0.0;
    let mut reg = 0.0;
    let mut grad_logits = vec![0.0; n];
    let mut grad_deltas = vec![[0.0; 4]; n];
    for i in assignment.sampled() {
        let p = predictions.objectness[i];
        let positive = assignment.labels[i] == AnchorLabel::Positive;
        let target = if positive { 1.0 } else { 0.0 };
        let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
        cls -= if positive { pc.ln() } else { (1.0 - pc).ln() };
        grad_logits[i] = (p - target) / weights.n_cls;
        if positive {
            let t_star = assignment.target(i).ok_or_else(|| {
                Error::InvalidInput(format!("positive anchor {i} lacks a target"))
            })?;
            let t = predictions.deltas[i].to_array();
            for (k, ts) in t_star.to_array().into_iter().enumerate() {
                let d = t[k] - ts;
                if d.abs() < 1.0 {
                    reg += 0.5 * d * d;
                    grad_deltas[i][k] = weights.lambda * d / weights.n_reg;
                } else {
                    reg += d.abs() - 0.5;
                    grad_deltas[i][k] = weights.lambda * d.signum() / weights.n_reg;
                }
            }
        }
    }
    let classification = cls / weights.n_cls;
    let regression = weights.lambda * reg / weights.n_reg;
    Ok(RpnLossOutput {
        total: classification + regression,
        classification,
        regression,
        grad_logits,
        grad_deltas,
    })
}

/// A candidate region in the network input frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub bbox: BBox,
    pub objectness: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProposalParams {
    pub pre_nms_top_n: usize,
    pub post_nms_top_n: usize,
    pub nms_iou: f64,
    pub image_size: f64,
}

/// Decodes and clips anchors, keeps the best `pre_nms_top_n` by objectness,
/// suppresses at `nms_iou`, and returns at most `post_nms_top_n` proposals.
/// Equal objectness is ordered by anchor index.
pub fn select_proposals(
    anchors: &[BBox],
    objectness: &[f64],
    deltas: &[BoxDelta],
    params: &ProposalParams,
) -> Result<Vec<Proposal>> {
    if anchors.len() != objectness.len() || anchors.len() != deltas.len() {
        return Err(Error::Shape(format!(
            "{} anchors, {} scores, {} deltas",
            anchors.len(),
            objectness.len(),
            deltas.len()
        )));
    }
    let cmp = |a: &usize, b: &usize| {
        objectness[*b]
            .partial_cmp(&objectness[*a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(b))
    };
    let mut order: Vec<usize> = (0..anchors.len()).collect();
    if order.len() > params.pre_nms_top_n && params.pre_nms_top_n > 0 {
        order.select_nth_unstable_by(params.pre_nms_top_n - 1, cmp);
        order.truncate(params.pre_nms_top_n);
    }
    order.sort_by(cmp);
    let mut candidates = Vec::with_capacity(order.len());
    for i in order {
        let decoded = decode(&anchors[i], &deltas[i])?;
        if let Some(bbox) = clip_to_bounds(&decoded.bbox, params.image_size, params.image_size) {
            candidates.push(ScoredBox::new(bbox, objectness[i], 1));
        }
    }
    // Candidates are already in descending score order with index tie-break,
    // so greedy suppression can stop as soon as enough boxes are kept.
    let mut kept: Vec<ScoredBox> = Vec::new();
    for c in candidates {
        if kept.len() >= params.post_nms_top_n {
            break;
        }
        if kept.iter().all(|k| k.bbox.iou(&c.bbox) <= params.nms_iou) {
            kept.push(c);
        }
    }
    Ok(kept
        .into_iter()
        .map(|s| Proposal {
            bbox: s.bbox,
            objectness: s.score,
        })
        .collect())
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
