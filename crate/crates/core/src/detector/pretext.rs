//! Backbone pretraining on seedling-vs-background patch classification.

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;

use super::model::{backprop_chain, build_backbone, run_chain, Layer, ParamGrads};
use super::DetectorConfig;
use crate::data::image_to_tensor;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::nn::{
    self, momentum_step, softmax_cross_entropy, softmax_rows, Checkpoint, LayerSpec, LrSchedule,
    Mode, OptimizerState, Tensor,
};
use crate::rng::stream_rng;
use crate::synth::Patch;

const IMBALANCE_WARN_RATIO: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PretextConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub base_lr: f32,
    pub momentum: f32,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for PretextConfig {
    fn default() -> Self {
        PretextConfig {
            steps: 300,
            batch_size: 16,
            base_lr: 0.01,
            momentum: 0.9,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

/// Detector backbone followed by a global max pool and a two-way linear layer.
#[derive(Debug, Clone)]
pub struct PatchClassifier {
    pub backbone: Vec<Layer>,
    pub fc: Layer,
}

impl PatchClassifier {
    pub fn new(config: &DetectorConfig, rng: &mut impl Rng) -> Self {
        let channels = config.backbone_channels;
        PatchClassifier {
            backbone: build_backbone(channels, rng),
            fc: Layer::new(
                "pretext.fc",
                LayerSpec::Linear {
                    in_features: channels[3],
                    out_features: 2,
                },
                rng,
            ),
        }
    }

    fn param_layers(&self) -> Vec<&Layer> {
        self.backbone
            .iter()
            .chain(std::iter::once(&self.fc))
            .filter(|l| l.params.is_some())
            .collect()
    }

    fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.backbone
            .iter_mut()
            .chain(std::iter::once(&mut self.fc))
            .filter_map(|l| l.params.as_mut())
            .flat_map(|p| [&mut p.weight, &mut p.bias])
            .collect()
    }

    fn named(&self) -> Vec<(String, &Tensor)> {
        self.param_layers()
            .into_iter()
            .flat_map(|l| {
                let p = l.params.as_ref().expect("filtered");
                [
                    (format!("{}.weight", l.name), &p.weight),
                    (format!("{}.bias", l.name), &p.bias),
                ]
            })
            .collect()
    }

    fn pool_spec(features: &Tensor) -> Result<LayerSpec> {
        let (_, _, h, w) = features.dims4()?;
        if h != w {
            return Err(Error::InvalidInput(format!(
                "patches must be square, got features {h}x{w}"
            )));
        }
        Ok(LayerSpec::MaxPool {
            kernel: h,
            stride: h,
        })
    }

    /// Two-way logits for one `[1, 3, S, S]` patch.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let (f, _) = run_chain(&self.backbone, x, Mode::Inference)?;
        let (pooled, _) = nn::forward(&Self::pool_spec(&f)?, None, &f, Mode::Inference)?;
        let c = pooled.len();
        Ok(self
            .fc
            .forward(&pooled.reshape(&[1, c])?, Mode::Inference)?
            .0)
    }

    fn gradients(&self, x: &Tensor, label: usize) -> Result<(f64, ParamGrads)> {
        let (f, caches) = run_chain(&self.backbone, x, Mode::Training)?;
        let pool = Self::pool_spec(&f)?;
        let (pooled, pool_cache) = nn::forward(&pool, None, &f, Mode::Training)?;
        let pooled_shape = pooled.shape().to_vec();
        let c = pooled.len();
        let (logits, fc_cache) = self.fc.forward(&pooled.reshape(&[1, c])?, Mode::Training)?;
        let ce = softmax_cross_entropy(&logits, &[label], 1.0)?;
        let g_fc = self.fc.backward(&fc_cache, &ce.grad)?;
        let g_pool = nn::backward(
            &pool,
            None,
            &pool_cache,
            &g_fc.input.reshape(&pooled_shape)?,
        )?;
        let mut grads = backprop_chain(&self.backbone, &caches, g_pool.input)?;
        grads.push(g_fc.params.expect("linear layer has parameters"));
        Ok((ce.value, ParamGrads(grads)))
    }

    /// Fraction of patches classified correctly.
    pub fn accuracy(&self, patches: &[Patch], exec: Execution) -> Result<f64> {
        if patches.is_empty() {
            return Err(Error::UndefinedMetric(
                "accuracy of an empty patch set".into(),
            ));
        }
        let correct: Vec<Result<bool>> = exec.map(patches, |p| {
            let probs = softmax_rows(&self.logits(&image_to_tensor(&p.image))?)?;
            Ok((probs[0][1] > probs[0][0]) == p.seedling)
        });
        let mut n = 0usize;
        for c in correct {
            n += c? as usize;
        }
        Ok(n as f64 / patches.len() as f64)
    }

    /// Backbone tensors only, named as in the detector.
    pub fn backbone_checkpoint(&self, step: u64) -> Checkpoint {
        Checkpoint::new(
            step,
            self.named()
                .into_iter()
                .filter(|(n, _)| n.starts_with("backbone."))
                .map(|(n, t)| (n, t.clone()))
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretextReport {
    pub steps: u64,
    pub final_loss: f64,
    pub positives: usize,
    pub negatives: usize,
}

/// Trains a patch classifier and returns it with a training summary.
///
/// Use [`PatchClassifier::backbone_checkpoint`] to hand the weights to the detector.
pub fn pretext_pretrain(
    patches: &[Patch],
    detector_config: &DetectorConfig,
    config: &PretextConfig,
) -> Result<(PatchClassifier, PretextReport)> {
    if patches.is_empty() {
        return Err(Error::InvalidInput("no pretext patches".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidInput("batch size must be positive".into()));
    }
    let positives = patches.iter().filter(|p| p.seedling).count();
    let negatives = patches.len() - positives;
    let (major, minor) = (
        positives.max(negatives) as f64,
        positives.min(negatives) as f64,
    );
    if minor == 0.0 || major / minor > IMBALANCE_WARN_RATIO {
        warn!("pretext classes are imbalanced: {positives} seedling vs {negatives} background patches");
    }

    let mut model = PatchClassifier::new(detector_config, &mut stream_rng(config.seed, 0));
    let names: Vec<String> = model.named().into_iter().map(|(n, _)| n).collect();
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let shapes: Vec<Vec<usize>> = model
        .named()
        .iter()
        .map(|(_, t)| t.shape().to_vec())
        .collect();
    let shape_refs: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();
    let mut opt = OptimizerState::new(
        config.momentum,
        LrSchedule::constant(config.base_lr),
        &shape_refs,
    );

    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut epoch = 0;
    let mut final_loss = f64::NAN;
    for step in 0..config.steps {
        let batch: Vec<usize> = (0..config.batch_size)
            .map(|_| {
                if cursor == order.len() {
                    order = (0..patches.len()).collect();
                    order.shuffle(&mut stream_rng(config.seed, 1 + epoch));
                    epoch += 1;
                    cursor = 0;
                }
                cursor += 1;
                order[cursor - 1]
            })
            .collect();
        let results = config.execution.map(&batch, |&i| {
            model.gradients(
                &image_to_tensor(&patches[i].image),
                patches[i].seedling as usize,
            )
        });
        let mut total = 0.0;
        let mut grads: Option<ParamGrads> = None;
        for r in results {
            let (l, g) = r?;
            total += l;
            match grads.as_mut() {
                Some(acc) => acc.add_assign(&g)?,
                None => grads = Some(g),
            }
        }
        let mut grads = grads.expect("non-empty batch");
        grads.scale(1.0 / batch.len() as f32);
        final_loss = total / batch.len() as f64;
        if !final_loss.is_finite() {
            return Err(Error::TrainingFault {
                step,
                reason: format!("non-finite pretext loss in batch {batch:?}"),
            });
        }
        momentum_step(
            &mut model.param_tensors_mut(),
            &grads.into_tensors(),
            &mut opt,
            &name_refs,
        )?;
    }
    Ok((
        model,
        PretextReport {
            steps: config.steps,
            final_loss,
            positives,
            negatives,
        },
    ))
}
