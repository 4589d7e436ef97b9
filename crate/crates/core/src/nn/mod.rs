//! Dense tensors, the handful of layers the detector uses, losses, the
//! momentum optimizer and the checkpoint format.

mod checkpoint;
mod layers;
mod loss;
mod optim;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, MAGIC, VERSION};
pub use layers::{
    backward, forward, param_backward, Cache, Gradients, LayerParams, LayerSpec, Mode,
};
pub use loss::{smooth_l1, softmax_cross_entropy, softmax_rows, LossOutput};
pub use optim::{momentum_step, LrSchedule, OptimizerState};
pub use tensor::Tensor;

use rand::Rng;

/// He-uniform weights (`U(-b, b)`, `b = sqrt(6 / fan_in)`) and zero biases.
pub fn he_uniform(spec: &LayerSpec, rng: &mut impl Rng) -> Option<LayerParams> {
    let (ws, bs) = spec.param_shapes()?;
    let bound = (6.0 / spec.fan_in() as f64).sqrt() as f32;
    let n: usize = ws.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Some(LayerParams {
        weight: Tensor::new(ws, data).expect("shape from spec"),
        bias: Tensor::zeros(&bs),
    })
}
