use rand::Rng;

use super::config::{DetectorConfig, HEAD_BOX_WEIGHTS};
use crate::error::{Error, Result};
use crate::nn::{self, Cache, Checkpoint, LayerParams, LayerSpec, Mode, Tensor};

/// A layer with its checkpoint name and (optional) parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub spec: LayerSpec,
    pub params: Option<LayerParams>,
}

impl Layer {
    pub fn new(name: impl Into<String>, spec: LayerSpec, rng: &mut impl Rng) -> Self {
        Layer {
            name: name.into(),
            params: nn::he_uniform(&spec, rng),
            spec,
        }
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, Cache)> {
        nn::forward(&self.spec, self.params.as_ref(), x, mode)
    }

    pub fn backward(&self, cache: &Cache, upstream: &Tensor) -> Result<nn::Gradients> {
        nn::backward(&self.spec, self.params.as_ref(), cache, upstream)
    }
}

/// Four 3x3 conv blocks; the first three downsample by two.
pub fn backbone_specs(channels: [usize; 4]) -> Vec<LayerSpec> {
    let mut specs = Vec::new();
    let mut prev = 3;
    for (i, &c) in channels.iter().enumerate() {
        let stride = if i < 3 { 2 } else { 1 };
        specs.push(LayerSpec::conv3x3(prev, c, stride));
        specs.push(LayerSpec::Relu);
        prev = c;
    }
    specs
}

pub fn build_backbone(channels: [usize; 4], rng: &mut impl Rng) -> Vec<Layer> {
    backbone_specs(channels)
        .into_iter()
        .enumerate()
        .map(|(i, spec)| Layer::new(format!("backbone.{i}"), spec, rng))
        .collect()
}

/// Runs a chain of layers, returning the output and the per-layer caches.
pub fn run_chain(layers: &[Layer], x: &Tensor, mode: Mode) -> Result<(Tensor, Vec<Cache>)> {
    let mut caches = Vec::with_capacity(layers.len());
    let mut cur = None;
    for layer in layers {
        let (y, cache) = layer.forward(cur.as_ref().unwrap_or(x), mode)?;
        caches.push(cache);
        cur = Some(y);
    }
    Ok((cur.unwrap_or_else(|| x.clone()), caches))
}

/// Back-propagates through a chain and returns the parameter gradients in
/// forward order. The gradient with respect to the chain input is not formed.
pub fn backprop_chain(
    layers: &[Layer],
    caches: &[Cache],
    upstream: Tensor,
) -> Result<Vec<LayerParams>> {
    let mut grad = upstream;
    let mut param_grads = Vec::new();
    for (i, (layer, cache)) in layers.iter().zip(caches).enumerate().rev() {
        if i == 0 {
            if let Some(p) = nn::param_backward(&layer.spec, layer.params.as_ref(), cache, &grad)? {
                param_grads.push(p);
            }
            break;
        }
        let g = layer.backward(cache, &grad)?;
        if let Some(p) = g.params {
            param_grads.push(p);
        }
        grad = g.input;
    }
    param_grads.reverse();
    Ok(param_grads)
}

/// Parameter gradients aligned with [`DetectorModel::param_layers`] order.
#[derive(Debug, Clone)]
pub struct ParamGrads(pub Vec<LayerParams>);

impl ParamGrads {
    pub fn add_assign(&mut self, other: &ParamGrads) -> Result<()> {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.weight.add_assign(&b.weight)?;
            a.bias.add_assign(&b.bias)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f32) {
        for p in &mut self.0 {
            p.weight.scale(factor);
            p.bias.scale(factor);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.0
            .iter()
            .flat_map(|p| p.weight.data().iter().chain(p.bias.data()))
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt()
    }

    pub fn into_tensors(self) -> Vec<Tensor> {
        self.0
            .into_iter()
            .flat_map(|p| [p.weight, p.bias])
            .collect()
    }
}

/// Backbone, region proposal head and two-way box head.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    pub config: DetectorConfig,
    pub backbone: Vec<Layer>,
    pub rpn_conv: Layer,
    pub rpn_cls: Layer,
    pub rpn_reg: Layer,
    pub head_fc: Layer,
    pub head_cls: Layer,
    pub head_reg: Layer,
}

impl DetectorModel {
    pub fn new(config: DetectorConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let c = config.backbone_channels[3];
        let k = config.anchors_per_cell();
        let r = config.rpn_channels;
        let pooled = c * config.roi_output_size * config.roi_output_size;
        let hidden = config.head_hidden;
        Ok(DetectorModel {
            backbone: build_backbone(config.backbone_channels, rng),
            rpn_conv: Layer::new("rpn.conv", LayerSpec::conv3x3(c, r, 1), rng),
            rpn_cls: Layer::new("rpn.cls", LayerSpec::conv1x1(r, k), rng),
            rpn_reg: Layer::new("rpn.reg", LayerSpec::conv1x1(r, 4 * k), rng),
            head_fc: Layer::new(
                "head.fc",
                LayerSpec::Linear {
                    in_features: pooled,
                    out_features: hidden,
                },
                rng,
            ),
            head_cls: Layer::new(
                "head.cls",
                LayerSpec::Linear {
                    in_features: hidden,
                    out_features: 2,
                },
                rng,
            ),
            head_reg: Layer::new(
                "head.reg",
                LayerSpec::Linear {
                    in_features: hidden,
                    out_features: 4,
                },
                rng,
            ),
            config,
        })
    }

    pub fn param_layers(&self) -> Vec<&Layer> {
        self.backbone
            .iter()
            .chain([
                &self.rpn_conv,
                &self.rpn_cls,
                &self.rpn_reg,
                &self.head_fc,
                &self.head_cls,
                &self.head_reg,
            ])
            .filter(|l| l.params.is_some())
            .collect()
    }

    fn param_layers_mut(&mut self) -> Vec<&mut Layer> {
        self.backbone
            .iter_mut()
            .chain([
                &mut self.rpn_conv,
                &mut self.rpn_cls,
                &mut self.rpn_reg,
                &mut self.head_fc,
                &mut self.head_cls,
                &mut self.head_reg,
            ])
            .filter(|l| l.params.is_some())
            .collect()
    }

    /// `(name, tensor)` pairs in checkpoint order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
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

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.param_layers_mut()
            .into_iter()
            .flat_map(|l| {
                let p = l.params.as_mut().expect("filtered");
                [&mut p.weight, &mut p.bias]
            })
            .collect()
    }

    pub fn zero_grads(&self) -> ParamGrads {
        ParamGrads(
            self.param_layers()
                .into_iter()
                .map(|l| {
                    let p = l.params.as_ref().expect("filtered");
                    LayerParams {
                        weight: Tensor::zeros(p.weight.shape()),
                        bias: Tensor::zeros(p.bias.shape()),
                    }
                })
                .collect(),
        )
    }

    pub fn to_checkpoint(&self, step: u64) -> Checkpoint {
        Checkpoint::new(
            step,
            self.named_tensors()
                .into_iter()
                .map(|(n, t)| (n, t.clone()))
                .collect(),
        )
    }

    /// Loads every tensor of the model from a checkpoint.
    pub fn from_checkpoint(config: DetectorConfig, checkpoint: &Checkpoint) -> Result<Self> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut model = DetectorModel::new(config, &mut rng)?;
        model.load_tensors(checkpoint, |_| true, true)?;
        Ok(model)
    }

    /// Copies the `backbone.*` tensors of a checkpoint into this model.
    pub fn load_backbone(&mut self, checkpoint: &Checkpoint) -> Result<()> {
        self.load_tensors(checkpoint, |n| n.starts_with("backbone."), true)
    }

    /// Loads a pretrained backbone, then rescales its last conv block so the
    /// feature RMS over `calibration` images matches that of the backbone it
    /// replaces, which is the scale the freshly initialised heads expect. ReLU
    /// is positively homogeneous, so only the magnitude of the features
    /// changes. Returns the applied factor.
    pub fn load_backbone_calibrated(
        &mut self,
        checkpoint: &Checkpoint,
        calibration: &[Tensor],
    ) -> Result<f32> {
        if calibration.is_empty() {
            return Err(Error::InvalidInput("no calibration images".into()));
        }
        let rms = |m: &DetectorModel| -> Result<f64> {
            let mut sum = 0.0;
            let mut n = 0usize;
            for x in calibration {
                let f = m.features(x)?;
                sum += f
                    .data()
                    .iter()
                    .map(|&v| (v as f64) * (v as f64))
                    .sum::<f64>();
                n += f.len();
            }
            Ok((sum / n as f64).sqrt())
        };
        let before = rms(self)?;
        self.load_backbone(checkpoint)?;
        let after = rms(self)?;
        if !(after > 0.0 && before > 0.0) {
            return Err(Error::InvalidInput(format!(
                "cannot calibrate backbone: feature RMS {before} before, {after} after loading"
            )));
        }
        let factor = (before / after) as f32;
        let last = self
            .backbone
            .iter_mut()
            .rev()
            .find_map(|l| l.params.as_mut())
            .expect("backbone has parameters");
        last.weight.scale(factor);
        last.bias.scale(factor);
        Ok(factor)
    }

    fn load_tensors(
        &mut self,
        checkpoint: &Checkpoint,
        select: impl Fn(&str) -> bool,
        required: bool,
    ) -> Result<()> {
        for layer in self.param_layers_mut() {
            if !select(&layer.name) {
                continue;
            }
            let name = layer.name.clone();
            let p = layer.params.as_mut().expect("filtered");
            for (suffix, dst) in [("weight", &mut p.weight), ("bias", &mut p.bias)] {
                let key = format!("{name}.{suffix}");
                match checkpoint.get(&key) {
                    Some(t) if t.shape() == dst.shape() => *dst = t.clone(),
                    Some(t) => {
                        return Err(Error::Shape(format!(
                            "checkpoint tensor {key} has shape {:?}, model expects {:?}",
                            t.shape(),
                            dst.shape()
                        )))
                    }
                    None if required => {
                        return Err(Error::CheckpointFormat(format!("missing tensor {key}")))
                    }
                    None => {}
                }
            }
        }
        Ok(())
    }

    pub fn head_box_weights() -> [f64; 4] {
        HEAD_BOX_WEIGHTS
    }
}
