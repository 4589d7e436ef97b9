//! Per-image forward and backward passes through the whole detector.

use rand::seq::SliceRandom;
use rand::Rng;

use super::model::{backprop_chain, run_chain, DetectorModel, ParamGrads};
use super::roi::{roi_pool, roi_pool_backward};
use super::rpn::{
    rpn_loss, select_proposals, sigmoid, Proposal, ProposalParams, RpnLossWeights, RpnPredictions,
};
use super::targets::{sample_anchor_targets, AnchorTargetAssignment};
use super::{BACKBONE_STRIDE, HEAD_BOX_WEIGHTS};
use crate::error::{Error, Result};
use crate::geometry::{clip_to_bounds, decode, encode, nms, BBox, BoxDelta, ScoredBox};
use crate::nn::{self, softmax_cross_entropy, Mode, Tensor};

/// Final output of the detector: a scored, classed box.
pub type Detection = ScoredBox;

/// Class id of the single foreground category.
pub const SEEDLING_CLASS: u32 = 1;

const MAX_SCORE: f64 = 1.0 - 1e-12;

/// Per-anchor outputs of the region proposal head.
#[derive(Debug, Clone)]
pub struct RpnOutputs {
    pub probabilities: Vec<f64>,
    pub deltas: Vec<BoxDelta>,
}

/// Reads `[1, k, H, W]` objectness logits and `[1, 4k, H, W]` deltas into
/// anchor order (row-major cell, then anchor within cell).
fn gather_rpn(cls: &Tensor, reg: &Tensor, k: usize) -> Result<RpnOutputs> {
    let (_, ck, h, w) = cls.dims4()?;
    if ck != k || reg.shape() != [1, 4 * k, h, w] {
        return Err(Error::Shape(format!(
            "rpn outputs {:?} / {:?} for {k} anchors per cell",
            cls.shape(),
            reg.shape()
        )));
    }
    let hw = h * w;
    let (c, r) = (cls.data(), reg.data());
    let mut probabilities = Vec::with_capacity(hw * k);
    let mut deltas = Vec::with_capacity(hw * k);
    for cell in 0..hw {
        for a in 0..k {
            probabilities.push(sigmoid(c[a * hw + cell] as f64));
            let d = |j: usize| r[(4 * a + j) * hw + cell] as f64;
            deltas.push(BoxDelta::new(d(0), d(1), d(2), d(3)));
        }
    }
    Ok(RpnOutputs {
        probabilities,
        deltas,
    })
}

fn scatter_rpn_grads(
    grad_logits: &[f64],
    grad_deltas: &[[f64; 4]],
    k: usize,
    h: usize,
    w: usize,
) -> (Tensor, Tensor) {
    let hw = h * w;
    let mut gc = Tensor::zeros(&[1, k, h, w]);
    let mut gr = Tensor::zeros(&[1, 4 * k, h, w]);
    for (i, (&gl, gd)) in grad_logits.iter().zip(grad_deltas).enumerate() {
        let (cell, a) = (i / k, i % k);
        gc.data_mut()[a * hw + cell] = gl as f32;
        for (j, &v) in gd.iter().enumerate() {
            gr.data_mut()[(4 * a + j) * hw + cell] = v as f32;
        }
    }
    (gc, gr)
}

/// Loss components of one image.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub rpn_cls: f64,
    pub rpn_reg: f64,
    pub head_cls: f64,
    pub head_reg: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.rpn_cls + self.rpn_reg + self.head_cls + self.head_reg
    }

    pub fn add(&mut self, o: &LossBreakdown) {
        self.rpn_cls += o.rpn_cls;
        self.rpn_reg += o.rpn_reg;
        self.head_cls += o.head_cls;
        self.head_reg += o.head_reg;
    }

    pub fn scaled(&self, f: f64) -> LossBreakdown {
        LossBreakdown {
            rpn_cls: self.rpn_cls * f,
            rpn_reg: self.rpn_reg * f,
            head_cls: self.head_cls * f,
            head_reg: self.head_reg * f,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total().is_finite()
    }
}

/// Network input plus ground truth, both in the input frame.
#[derive(Debug, Clone)]
pub struct TrainingImage<'a> {
    pub pixels: &'a Tensor,
    pub boxes: &'a [BBox],
    /// Anchor labels before subsampling, computed once per image.
    pub labelled: &'a AnchorTargetAssignment,
}

/// Regions sampled for the box head with their class labels and targets.
struct RoiBatch {
    rois: Vec<Proposal>,
    labels: Vec<usize>,
    targets: Vec<Option<[f64; 4]>>,
}

fn sample_rois(
    proposals: &[Proposal],
    gt: &[BBox],
    model: &DetectorModel,
    rng: &mut impl Rng,
) -> Result<RoiBatch> {
    let cfg = &model.config;
    let mut candidates: Vec<Proposal> = proposals.to_vec();
    candidates.extend(gt.iter().map(|&bbox| Proposal {
        bbox,
        objectness: 1.0,
    }));
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    let mut matched = Vec::with_capacity(candidates.len());
    for (i, c) in candidates.iter().enumerate() {
        let mut best = (0.0, None);
        for (g, b) in gt.iter().enumerate() {
            let v = c.bbox.iou(b);
            if v > best.0 {
                best = (v, Some(g));
            }
        }
        matched.push(best.1);
        if best.0 >= cfg.roi_foreground_iou {
            fg.push(i);
        } else {
            bg.push(i);
        }
    }
    let max_fg = (cfg.roi_batch_size as f64 * cfg.roi_positive_fraction) as usize;
    fg.shuffle(rng);
    fg.truncate(max_fg);
    bg.shuffle(rng);
    bg.truncate(cfg.roi_batch_size - fg.len());
    let mut batch = RoiBatch {
        rois: Vec::new(),
        labels: Vec::new(),
        targets: Vec::new(),
    };
    for &i in &fg {
        let g = matched[i].expect("foreground has a match");
        let d = encode(&candidates[i].bbox, &gt[g])?.to_array();
        batch.rois.push(candidates[i]);
        batch.labels.push(1);
        batch
            .targets
            .push(Some(std::array::from_fn(|j| d[j] * HEAD_BOX_WEIGHTS[j])));
    }
    for &i in &bg {
        batch.rois.push(candidates[i]);
        batch.labels.push(0);
        batch.targets.push(None);
    }
    Ok(batch)
}

impl DetectorModel {
    pub fn proposal_params(&self) -> ProposalParams {
        ProposalParams {
            pre_nms_top_n: self.config.proposal_pre_nms_top_n,
            post_nms_top_n: self.config.proposal_post_nms_top_n,
            nms_iou: self.config.proposal_nms_iou,
            image_size: self.config.input_size as f64,
        }
    }

    fn check_input(&self, image: &Tensor) -> Result<()> {
        let s = self.config.input_size;
        if image.shape() != [1, 3, s, s] {
            return Err(Error::InvalidInput(format!(
                "detector expects a [1, 3, {s}, {s}] image, got {:?}",
                image.shape()
            )));
        }
        Ok(())
    }

    /// Backbone features of a `[1, 3, S, S]` image.
    pub fn features(&self, image: &Tensor) -> Result<Tensor> {
        self.check_input(image)?;
        Ok(run_chain(&self.backbone, image, Mode::Inference)?.0)
    }

    pub fn rpn_outputs(&self, features: &Tensor) -> Result<RpnOutputs> {
        let (h, _) = self.rpn_conv.forward(features, Mode::Inference)?;
        let h = nn::forward(&nn::LayerSpec::Relu, None, &h, Mode::Inference)?.0;
        let (cls, _) = self.rpn_cls.forward(&h, Mode::Inference)?;
        let (reg, _) = self.rpn_reg.forward(&h, Mode::Inference)?;
        gather_rpn(&cls, &reg, self.config.anchors_per_cell())
    }

    pub fn propose(&self, features: &Tensor, anchors: &[BBox]) -> Result<Vec<Proposal>> {
        let rpn = self.rpn_outputs(features)?;
        select_proposals(
            anchors,
            &rpn.probabilities,
            &rpn.deltas,
            &self.proposal_params(),
        )
    }

    /// Pools every region and runs the box head, returning per-region
    /// foreground probability and decoded boxes.
    fn head_predict(&self, features: &Tensor, rois: &[Proposal]) -> Result<Vec<(f64, BBox)>> {
        if rois.is_empty() {
            return Ok(Vec::new());
        }
        let pooled = self.pool_rois(features, rois)?.0;
        let (hid, _) = self.head_fc.forward(&pooled, Mode::Inference)?;
        let hid = nn::forward(&nn::LayerSpec::Relu, None, &hid, Mode::Inference)?.0;
        let (cls, _) = self.head_cls.forward(&hid, Mode::Inference)?;
        let (reg, _) = self.head_reg.forward(&hid, Mode::Inference)?;
        let mut out = Vec::with_capacity(rois.len());
        for (i, roi) in rois.iter().enumerate() {
            let z = &cls.data()[2 * i..2 * i + 2];
            let score = sigmoid(z[1] as f64 - z[0] as f64).min(MAX_SCORE);
            let r = &reg.data()[4 * i..4 * i + 4];
            let delta = BoxDelta::new(
                r[0] as f64 / HEAD_BOX_WEIGHTS[0],
                r[1] as f64 / HEAD_BOX_WEIGHTS[1],
                r[2] as f64 / HEAD_BOX_WEIGHTS[2],
                r[3] as f64 / HEAD_BOX_WEIGHTS[3],
            );
            out.push((score, decode(&roi.bbox, &delta)?.bbox));
        }
        Ok(out)
    }

    #[allow(clippy::type_complexity)]
    fn pool_rois(
        &self,
        features: &Tensor,
        rois: &[Proposal],
    ) -> Result<(Tensor, Vec<super::roi::RoiPooled>)> {
        let p = self.config.roi_output_size;
        let c = features.shape()[1];
        let width = c * p * p;
        let mut data = Vec::with_capacity(rois.len() * width);
        let mut pooled = Vec::with_capacity(rois.len());
        for roi in rois {
            let r = roi_pool(features, roi, p, BACKBONE_STRIDE)?;
            data.extend_from_slice(&r.values);
            pooled.push(r);
        }
        Ok((Tensor::new(vec![rois.len(), width], data)?, pooled))
    }

    /// Detections in the network input frame.
    pub fn detect_input_frame(&self, image: &Tensor, anchors: &[BBox]) -> Result<Vec<Detection>> {
        let features = self.features(image)?;
        let proposals = self.propose(&features, anchors)?;
        let size = self.config.input_size as f64;
        let mut candidates = Vec::new();
        for (score, bbox) in self.head_predict(&features, &proposals)? {
            if score < self.config.score_threshold {
                continue;
            }
            if let Some(b) = clip_to_bounds(&bbox, size, size) {
                candidates.push(ScoredBox::new(b, score, SEEDLING_CLASS));
            }
        }
        let mut kept = nms(&candidates, self.config.detection_nms_iou);
        kept.truncate(self.config.max_detections);
        Ok(kept)
    }

    /// Forward and backward pass for one training image. Anchor and region
    /// subsampling draw from `rng`.
    pub fn image_gradients(
        &self,
        sample: &TrainingImage<'_>,
        anchors: &[BBox],
        rng: &mut impl Rng,
    ) -> Result<(LossBreakdown, ParamGrads)> {
        self.check_input(sample.pixels)?;
        let cfg = &self.config;
        let k = cfg.anchors_per_cell();
        let (features, bb_caches) = run_chain(&self.backbone, sample.pixels, Mode::Training)?;
        let (_, _, fh, fw) = features.dims4()?;

        // region proposal head
        let (rpn_pre, c_conv) = self.rpn_conv.forward(&features, Mode::Training)?;
        let (rpn_hidden, c_relu) =
            nn::forward(&nn::LayerSpec::Relu, None, &rpn_pre, Mode::Training)?;
        let (cls, c_cls) = self.rpn_cls.forward(&rpn_hidden, Mode::Training)?;
        let (reg, c_reg) = self.rpn_reg.forward(&rpn_hidden, Mode::Training)?;
        let rpn = gather_rpn(&cls, &reg, k)?;
        let sampled = sample_anchor_targets(sample.labelled, cfg, rng);
        let rpn_out = rpn_loss(
            RpnPredictions {
                objectness: &rpn.probabilities,
                deltas: &rpn.deltas,
            },
            &sampled,
            RpnLossWeights {
                lambda: cfg.rpn_lambda,
                n_cls: cfg.rpn_batch_size as f64,
                n_reg: cfg.anchor_locations() as f64,
            },
        )?;

        // box head on sampled regions
        let proposals = select_proposals(
            anchors,
            &rpn.probabilities,
            &rpn.deltas,
            &self.proposal_params(),
        )?;
        let batch = sample_rois(&proposals, sample.boxes, self, rng)?;
        let mut losses = LossBreakdown {
            rpn_cls: rpn_out.classification,
            rpn_reg: rpn_out.regression,
            ..Default::default()
        };
        let mut feature_grad = Tensor::zeros(features.shape());
        let mut head_grads = None;
        if !batch.rois.is_empty() {
            let n = batch.rois.len();
            let (pooled, pooled_idx) = self.pool_rois(&features, &batch.rois)?;
            let (fc, c_fc) = self.head_fc.forward(&pooled, Mode::Training)?;
            let (hid, c_hid) = nn::forward(&nn::LayerSpec::Relu, None, &fc, Mode::Training)?;
            let (hcls, c_hcls) = self.head_cls.forward(&hid, Mode::Training)?;
            let (hreg, c_hreg) = self.head_reg.forward(&hid, Mode::Training)?;
            let ce = softmax_cross_entropy(&hcls, &batch.labels, n as f64)?;
            losses.head_cls = ce.value;
            let mut reg_grad = Tensor::zeros(hreg.shape());
            let mut reg_loss = 0.0;
            for (i, t) in batch.targets.iter().enumerate() {
                let Some(t) = t else { continue };
                let diff = Tensor::new(
                    vec![4],
                    (0..4)
                        .map(|j| (hreg.data()[4 * i + j] as f64 - t[j]) as f32)
                        .collect(),
                )?;
                let l = nn::smooth_l1(&diff);
                reg_loss += l.value;
                for j in 0..4 {
                    reg_grad.data_mut()[4 * i + j] = l.grad.data()[j] / n as f32;
                }
            }
            losses.head_reg = reg_loss / n as f64;
            let g_cls = self.head_cls.backward(&c_hcls, &ce.grad)?;
            let g_reg = self.head_reg.backward(&c_hreg, &reg_grad)?;
            let mut g_hid = g_cls.input;
            g_hid.add_assign(&g_reg.input)?;
            let g_relu = nn::backward(&nn::LayerSpec::Relu, None, &c_hid, &g_hid)?;
            let g_fc = self.head_fc.backward(&c_fc, &g_relu.input)?;
            let width = g_fc.input.shape()[1];
            for (r, pooled) in pooled_idx.iter().enumerate() {
                roi_pool_backward(
                    pooled,
                    &g_fc.input.data()[r * width..(r + 1) * width],
                    feature_grad.data_mut(),
                );
            }
            head_grads = Some([
                g_fc.params.expect("linear"),
                g_cls.params.expect("linear"),
                g_reg.params.expect("linear"),
            ]);
        }

        let (g_cls_map, g_reg_map) =
            scatter_rpn_grads(&rpn_out.grad_logits, &rpn_out.grad_deltas, k, fh, fw);
        let g_rcls = self.rpn_cls.backward(&c_cls, &g_cls_map)?;
        let g_rreg = self.rpn_reg.backward(&c_reg, &g_reg_map)?;
        let mut g_hidden = g_rcls.input;
        g_hidden.add_assign(&g_rreg.input)?;
        let g_rrelu = nn::backward(&nn::LayerSpec::Relu, None, &c_relu, &g_hidden)?;
        let g_rconv = self.rpn_conv.backward(&c_conv, &g_rrelu.input)?;
        feature_grad.add_assign(&g_rconv.input)?;
        let mut grads = backprop_chain(&self.backbone, &bb_caches, feature_grad)?;

        grads.push(g_rconv.params.expect("conv"));
        grads.push(g_rcls.params.expect("conv"));
        grads.push(g_rreg.params.expect("conv"));
        match head_grads {
            Some(h) => grads.extend(h),
            None => {
                let zero = self.zero_grads();
                grads.extend(zero.0.into_iter().skip(grads.len()));
            }
        }
        Ok((losses, ParamGrads(grads)))
    }
}
