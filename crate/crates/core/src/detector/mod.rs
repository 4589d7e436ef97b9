mod config;
mod forward;
mod model;
mod pretext;
mod roi;
mod rpn;
mod targets;
mod train;

use image::RgbImage;

pub use self::config::{DetectorConfig, BACKBONE_STRIDE, HEAD_BOX_WEIGHTS};
pub use self::forward::{Detection, LossBreakdown, RpnOutputs, TrainingImage, SEEDLING_CLASS};
pub use self::model::{backbone_specs, build_backbone, DetectorModel, Layer, ParamGrads};
pub use self::pretext::{pretext_pretrain, PatchClassifier, PretextConfig, PretextReport};
pub use self::roi::{roi_footprint, roi_pool, roi_pool_backward, RoiPooled};
pub use self::rpn::{
    rpn_loss, select_proposals, Proposal, ProposalParams, RpnLossOutput, RpnLossWeights,
    RpnPredictions,
};
pub use self::targets::{
    assign_anchor_targets, label_anchors, sample_anchor_targets, AnchorLabel, AnchorMatch,
    AnchorTargetAssignment,
};
pub use self::train::{
    prepare_samples, train, PreparedSample, TrainConfig, TrainLogRecord, TrainOutcome,
    ValidationSet,
};

use crate::data::{image_to_tensor, resize_with_boxes};
use crate::error::Result;
use crate::geometry::{clip_to_bounds, generate_anchors, BBox, ScoredBox};
use crate::nn::Tensor;

/// A model snapshot with its anchor grid, ready for inference.
///
/// Read-only after construction, so one instance can serve concurrent callers.
#[derive(Debug, Clone)]
pub struct Detector {
    model: DetectorModel,
    anchors: Vec<BBox>,
}

impl Detector {
    pub fn new(model: DetectorModel) -> Result<Self> {
        let anchors = generate_anchors(&model.config.anchor_spec())?;
        Ok(Detector { model, anchors })
    }

    pub fn model(&self) -> &DetectorModel {
        &self.model
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.model.config
    }

    pub fn anchors(&self) -> &[BBox] {
        &self.anchors
    }

    /// Detections for an already resized `[1, 3, S, S]` input, in the input frame.
    pub fn detect(&self, image: &Tensor) -> Result<Vec<Detection>> {
        self.model.detect_input_frame(image, &self.anchors)
    }

    /// Resizes a square tile to the network input and maps detections back to
    /// the tile frame.
    pub fn detect_tile(&self, tile: &RgbImage) -> Result<Vec<Detection>> {
        let (resized, _, mapping) = resize_with_boxes(tile, &[], self.model.config.input_size)?;
        let dets = self.detect(&image_to_tensor(&resized))?;
        let size = tile.width() as f64;
        Ok(dets
            .into_iter()
            .filter_map(|d| {
                clip_to_bounds(&mapping.inverse(&d.bbox), size, size)
                    .map(|b| ScoredBox { bbox: b, ..d })
            })
            .collect())
    }
}
