use serde::{Deserialize, Serialize};

use crate::error::{ensure_input, Result};
use crate::geometry::AnchorGridSpec;

/// Everything that shapes the detector and its training-time sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Square network input side in pixels.
    pub input_size: usize,
    /// Output channels of the four backbone conv blocks.
    pub backbone_channels: [usize; 4],
    pub rpn_channels: usize,
    pub anchor_scales: Vec<f64>,
    pub anchor_ratios: Vec<f64>,
    pub rpn_positive_iou: f64,
    pub rpn_negative_iou: f64,
    /// `N_cls`: anchors sampled per image for the objectness term.
    pub rpn_batch_size: usize,
    pub rpn_positive_fraction: f64,
    /// `lambda`: weight of the box regression term.
    pub rpn_lambda: f64,
    pub proposal_pre_nms_top_n: usize,
    pub proposal_post_nms_top_n: usize,
    pub proposal_nms_iou: f64,
    pub roi_batch_size: usize,
    pub roi_positive_fraction: f64,
    pub roi_foreground_iou: f64,
    pub roi_output_size: usize,
    pub head_hidden: usize,
    pub score_threshold: f64,
    pub detection_nms_iou: f64,
    pub max_detections: usize,
}

/// Effective stride of the backbone (three stride-2 blocks).
pub const BACKBONE_STRIDE: usize = 8;

/// Regression target scaling for the second-stage head.
pub const HEAD_BOX_WEIGHTS: [f64; 4] = [10.0, 10.0, 5.0, 5.0];

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            input_size: 640,
            backbone_channels: [16, 24, 32, 32],
            rpn_channels: 32,
            anchor_scales: vec![8.0, 16.0, 32.0],
            anchor_ratios: vec![0.5, 1.0, 2.0],
            rpn_positive_iou: 0.7,
            rpn_negative_iou: 0.3,
            rpn_batch_size: 256,
            rpn_positive_fraction: 0.5,
            rpn_lambda: 10.0,
            proposal_pre_nms_top_n: 2000,
            proposal_post_nms_top_n: 300,
            proposal_nms_iou: 0.7,
            roi_batch_size: 128,
            roi_positive_fraction: 0.5,
            roi_foreground_iou: 0.5,
            roi_output_size: 4,
            head_hidden: 64,
            score_threshold: 0.05,
            detection_nms_iou: 0.5,
            max_detections: 200,
        }
    }
}

impl DetectorConfig {
    pub fn feature_size(&self) -> usize {
        self.input_size.div_ceil(BACKBONE_STRIDE)
    }

    pub fn anchor_spec(&self) -> AnchorGridSpec {
        let f = self.feature_size();
        AnchorGridSpec {
            stride: BACKBONE_STRIDE,
            scales: self.anchor_scales.clone(),
            ratios: self.anchor_ratios.clone(),
            feature_height: f,
            feature_width: f,
        }
    }

    pub fn anchors_per_cell(&self) -> usize {
        self.anchor_scales.len() * self.anchor_ratios.len()
    }

    /// `N_reg`: number of anchor locations on the feature map.
    pub fn anchor_locations(&self) -> usize {
        self.feature_size() * self.feature_size()
    }

    pub fn validate(&self) -> Result<()> {
        ensure_input!(
            self.input_size >= BACKBONE_STRIDE && self.input_size.is_multiple_of(BACKBONE_STRIDE),
            "input size {} must be a positive multiple of {BACKBONE_STRIDE}",
            self.input_size
        );
        ensure_input!(
            self.rpn_negative_iou < self.rpn_positive_iou,
            "rpn_negative_iou {} must be below rpn_positive_iou {}",
            self.rpn_negative_iou,
            self.rpn_positive_iou
        );
        ensure_input!(self.max_detections >= 1, "max_detections must be >= 1");
        ensure_input!(self.rpn_batch_size >= 1, "rpn_batch_size must be >= 1");
        ensure_input!(self.roi_output_size >= 1, "roi_output_size must be >= 1");
        ensure_input!(
            (0.0..=1.0).contains(&self.score_threshold),
            "score_threshold {} outside [0, 1]",
            self.score_threshold
        );
        ensure_input!(
            self.backbone_channels.iter().all(|&c| c > 0 && c <= 64),
            "backbone channels must be in 1..=64"
        );
        self.anchor_spec().validate()
    }
}
