//! Mini-batch momentum training of the full detector.

use image::RgbImage;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::forward::{LossBreakdown, TrainingImage};
use super::model::DetectorModel;
use super::targets::{label_anchors, AnchorTargetAssignment};
use super::Detector;
use crate::data::{image_to_tensor, resize_with_boxes, AnnotationRecord};
use crate::error::{Error, Result};
use crate::eval::{evaluate, ImageEval};
use crate::exec::Execution;
use crate::geometry::BBox;
use crate::nn::{momentum_step, Checkpoint, LrSchedule, OptimizerState};
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub base_lr: f32,
    pub momentum: f32,
    /// Steps at which the learning rate is multiplied by `lr_decay`.
    pub lr_boundaries: Vec<u64>,
    pub lr_decay: f32,
    /// Rescales the averaged gradient when its global norm exceeds this.
    pub grad_clip: Option<f64>,
    pub seed: u64,
    /// Validation interval in steps; 0 evaluates only after the last step.
    pub eval_every: u64,
    pub eval_iou: f64,
    /// Stop as soon as validation AP reaches this value.
    pub target_ap: Option<f64>,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_size: 8,
            base_lr: 0.01,
            momentum: 0.9,
            lr_boundaries: vec![1500],
            lr_decay: 0.1,
            grad_clip: Some(10.0),
            seed: 0,
            eval_every: 250,
            eval_iou: 0.5,
            target_ap: None,
            execution: Execution::default(),
        }
    }
}

impl TrainConfig {
    /// Step count and schedule used for the full-length run of the original setup.
    pub fn long_schedule() -> Self {
        TrainConfig {
            steps: 25_000,
            lr_boundaries: vec![18_000, 22_000],
            eval_every: 1000,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch size must be positive".into()));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) || !(0.0..1.0).contains(&self.momentum)
        {
            return Err(Error::InvalidInput(format!(
                "invalid optimiser settings lr={} momentum={}",
                self.base_lr, self.momentum
            )));
        }
        Ok(())
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule::step_decay(self.base_lr, self.lr_boundaries.clone(), self.lr_decay)
    }
}

/// A training tile resized to the network input with its anchor labels.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub id: String,
    pub image: RgbImage,
    pub boxes: Vec<BBox>,
    pub labelled: AnchorTargetAssignment,
}

/// Resizes tiles to the network input and labels anchors once per tile.
pub fn prepare_samples(
    tiles: &[(String, RgbImage, AnnotationRecord)],
    model: &DetectorModel,
    anchors: &[BBox],
    exec: Execution,
) -> Result<Vec<PreparedSample>> {
    let size = model.config.input_size;
    exec.map(tiles, |(id, img, record)| {
        record.validate()?;
        let (image, boxes, _) = resize_with_boxes(img, &record.boxes(), size)?;
        let labelled = label_anchors(anchors, &boxes, &model.config)?;
        Ok(PreparedSample {
            id: id.clone(),
            image,
            boxes,
            labelled,
        })
    })
    .into_iter()
    .collect()
}

/// Validation tiles in the network input frame.
#[derive(Debug, Clone, Default)]
pub struct ValidationSet {
    pub images: Vec<RgbImage>,
    pub boxes: Vec<Vec<BBox>>,
}

impl ValidationSet {
    pub fn from_tiles(
        tiles: &[(String, RgbImage, AnnotationRecord)],
        input_size: usize,
    ) -> Result<Self> {
        let mut set = ValidationSet::default();
        for (_, img, record) in tiles {
            let (image, boxes, _) = resize_with_boxes(img, &record.boxes(), input_size)?;
            set.images.push(image);
            set.boxes.push(boxes);
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// AP of `detector` over the set.
    pub fn average_precision(&self, detector: &Detector, iou: f64, exec: Execution) -> Result<f64> {
        let dets: Vec<_> = exec
            .map(&self.images, |img| detector.detect(&image_to_tensor(img)))
            .into_iter()
            .collect::<Result<_>>()?;
        let images: Vec<ImageEval<'_>> = dets
            .iter()
            .zip(&self.boxes)
            .map(|(d, g)| ImageEval {
                detections: d,
                ground_truth: g,
            })
            .collect();
        let (report, _) = evaluate("val", &images, iou, detector.config().score_threshold)?;
        Ok(report.ap)
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub step: u64,
    pub lr: f32,
    pub loss: f64,
    pub rpn_cls: f64,
    pub rpn_reg: f64,
    pub head_cls: f64,
    pub head_reg: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_ap: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: DetectorModel,
    /// Best validation checkpoint, or the final weights without validation.
    pub checkpoint: Checkpoint,
    pub best_val_ap: Option<f64>,
    pub steps_run: u64,
    /// First step at which validation AP reached `target_ap`.
    pub target_reached_at: Option<u64>,
    pub log: Vec<TrainLogRecord>,
}

const BATCH_STREAM: u64 = 1 << 40;

/// Trains `model` in place of a fresh copy and returns the outcome.
///
/// Each image's gradient is computed independently from its own random
/// stream and the batch gradient is summed in batch order, so the result
/// does not depend on how the per-image work is scheduled.
pub fn train(
    mut model: DetectorModel,
    samples: &[PreparedSample],
    val: Option<&ValidationSet>,
    config: &TrainConfig,
    on_record: &mut dyn FnMut(&TrainLogRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    let anchors = crate::geometry::generate_anchors(&model.config.anchor_spec())?;
    let shapes: Vec<Vec<usize>> = model
        .named_tensors()
        .iter()
        .map(|(_, t)| t.shape().to_vec())
        .collect();
    let names: Vec<String> = model.named_tensors().into_iter().map(|(n, _)| n).collect();
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let shape_refs: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();
    let mut opt = OptimizerState::new(config.momentum, config.schedule(), &shape_refs);

    let mut log = Vec::new();
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut target_reached_at = None;
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0usize;
    let mut epoch = 0u64;
    let mut step = 0u64;

    if !samples.is_empty() {
        while step < config.steps {
            let batch: Vec<usize> = (0..config.batch_size)
                .map(|_| {
                    if cursor == order.len() {
                        order = (0..samples.len()).collect();
                        order.shuffle(&mut stream_rng(config.seed, BATCH_STREAM + epoch));
                        epoch += 1;
                        cursor = 0;
                    }
                    cursor += 1;
                    order[cursor - 1]
                })
                .collect();

            let per_image = config.execution.map_range(batch.len(), |j| {
                let s = &samples[batch[j]];
                let pixels = image_to_tensor(&s.image);
                let mut rng = stream_rng(config.seed, step * config.batch_size as u64 + j as u64);
                model.image_gradients(
                    &TrainingImage {
                        pixels: &pixels,
                        boxes: &s.boxes,
                        labelled: &s.labelled,
                    },
                    &anchors,
                    &mut rng,
                )
            });
            let mut loss = LossBreakdown::default();
            let mut grads = model.zero_grads();
            for (r, &i) in per_image.into_iter().zip(&batch) {
                // prepared samples are already validated, so a failure here is numeric
                let (l, g) = r.map_err(|e| Error::TrainingFault {
                    step,
                    reason: format!(
                        "{e} on {} in batch [{}]",
                        samples[i].id,
                        batch_ids(samples, &batch)
                    ),
                })?;
                loss.add(&l);
                grads.add_assign(&g)?;
            }
            let inv = 1.0 / batch.len() as f64;
            let loss = loss.scaled(inv);
            if !loss.is_finite() {
                return Err(Error::TrainingFault {
                    step,
                    reason: format!(
                        "non-finite loss {:?} in batch [{}]",
                        loss,
                        batch_ids(samples, &batch)
                    ),
                });
            }
            grads.scale(inv as f32);
            if let Some(max) = config.grad_clip {
                let norm = grads.global_norm();
                if norm > max {
                    grads.scale((max / norm) as f32);
                }
            }
            let lr = opt.current_lr();
            let grad_tensors = grads.into_tensors();
            momentum_step(
                &mut model.param_tensors_mut(),
                &grad_tensors,
                &mut opt,
                &name_refs,
            )?;
            if let Some((name, _)) = model
                .named_tensors()
                .into_iter()
                .find(|(_, t)| t.data().iter().any(|v| !v.is_finite()))
            {
                let ids: Vec<&str> = batch.iter().map(|&i| samples[i].id.as_str()).collect();
                return Err(Error::TrainingFault {
                    step,
                    reason: format!(
                        "non-finite {name} after update on batch [{}]",
                        ids.join(", ")
                    ),
                });
            }
            step += 1;

            let eval_now = val.is_some_and(|v| !v.is_empty())
                && ((config.eval_every > 0 && step.is_multiple_of(config.eval_every))
                    || step == config.steps);
            let val_ap = if eval_now {
                let detector = Detector::new(model.clone())?;
                let ap = val.expect("checked").average_precision(
                    &detector,
                    config.eval_iou,
                    config.execution,
                )?;
                if best.as_ref().is_none_or(|(b, _)| ap > *b) {
                    best = Some((ap, model.to_checkpoint(step)));
                }
                Some(ap)
            } else {
                None
            };
            let record = TrainLogRecord {
                step,
                lr,
                loss: loss.total(),
                rpn_cls: loss.rpn_cls,
                rpn_reg: loss.rpn_reg,
                head_cls: loss.head_cls,
                head_reg: loss.head_reg,
                val_ap,
            };
            on_record(&record);
            log.push(record);
            if let (Some(target), Some(ap)) = (config.target_ap, val_ap) {
                if ap >= target {
                    target_reached_at = Some(step);
                    break;
                }
            }
        }
    }

    let (checkpoint, best_val_ap) = match best {
        Some((ap, ckpt)) => (ckpt, Some(ap)),
        None => (model.to_checkpoint(step), None),
    };
    Ok(TrainOutcome {
        model,
        checkpoint,
        best_val_ap,
        steps_run: step,
        target_reached_at,
        log,
    })
}

fn batch_ids(samples: &[PreparedSample], batch: &[usize]) -> String {
    batch
        .iter()
        .map(|&i| samples[i].id.as_str())
        .collect::<Vec<_>>()
        .join(", ")
}
