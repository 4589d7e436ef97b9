use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Piecewise-constant learning rate: `base` times every factor whose boundary
/// has been reached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f32,
    pub boundaries: Vec<u64>,
    pub factors: Vec<f32>,
}

impl LrSchedule {
    pub fn constant(base: f32) -> Self {
        LrSchedule {
            base,
            boundaries: Vec::new(),
            factors: Vec::new(),
        }
    }

    pub fn step_decay(base: f32, boundaries: Vec<u64>, factor: f32) -> Self {
        let factors = vec![factor; boundaries.len()];
        LrSchedule {
            base,
            boundaries,
            factors,
        }
    }

    pub fn lr(&self, step: u64) -> f32 {
        self.boundaries
            .iter()
            .zip(&self.factors)
            .filter(|(&b, _)| step >= b)
            .fold(self.base, |lr, (_, &f)| lr * f)
    }
}

/// Heavy-ball momentum: `v <- mu * v + g`, `p <- p - lr(step) * v`.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub momentum: f32,
    pub schedule: LrSchedule,
    pub velocities: Vec<Tensor>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(momentum: f32, schedule: LrSchedule, param_shapes: &[&[usize]]) -> Self {
        OptimizerState {
            momentum,
            schedule,
            velocities: param_shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            step: 0,
        }
    }

    pub fn current_lr(&self) -> f32 {
        self.schedule.lr(self.step)
    }
}

/// One momentum update. `names` labels parameters in diagnostics.
pub fn momentum_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut OptimizerState,
    names: &[&str],
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocities.len() {
        return Err(Error::Shape(format!(
            "{} params, {} grads, {} velocities",
            params.len(),
            grads.len(),
            state.velocities.len()
        )));
    }
    for (i, ((p, g), v)) in params.iter().zip(grads).zip(&state.velocities).enumerate() {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(Error::Shape(format!(
                "parameter {} shape {:?}, grad {:?}, velocity {:?}",
                names.get(i).copied().unwrap_or("?"),
                p.shape(),
                g.shape(),
                v.shape()
            )));
        }
        if !g.all_finite() {
            return Err(Error::TrainingFault {
                step: state.step,
                reason: format!(
                    "non-finite gradient for parameter {}",
                    names.get(i).copied().unwrap_or("?")
                ),
            });
        }
    }
    let lr = state.current_lr();
    let mu = state.momentum;
    for ((p, g), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.velocities.iter_mut())
    {
        for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vv = mu * *vv + gv;
            *pv -= lr * *vv;
        }
    }
    state.step += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::full(&[3], 2.0);
        let g = Tensor::zeros(&[3]);
        let mut st = OptimizerState::new(0.9, LrSchedule::constant(0.1), &[&[3]]);
        momentum_step(&mut [&mut p], &[g], &mut st, &["p"]).unwrap();
        assert_eq!(p.data(), &[2.0; 3]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn two_steps_of_unit_gradient() {
        let mut p = Tensor::zeros(&[1]);
        let g = Tensor::full(&[1], 1.0);
        let mut st = OptimizerState::new(0.9, LrSchedule::constant(0.1), &[&[1]]);
        momentum_step(&mut [&mut p], std::slice::from_ref(&g), &mut st, &["p"]).unwrap();
        assert!((p.data()[0] + 0.1).abs() < 1e-7);
        momentum_step(&mut [&mut p], &[g], &mut st, &["p"]).unwrap();
        assert!((p.data()[0] + 0.29).abs() < 1e-6);
    }

    #[test]
    fn step_decay_schedule() {
        let s = LrSchedule::step_decay(0.02, vec![100], 0.1);
        assert!((s.lr(99) - 10.0 * s.lr(100)).abs() < 1e-8);
        assert_eq!(s.lr(0), 0.02);
    }

    #[test]
    fn non_finite_gradient_faults() {
        let mut p = Tensor::zeros(&[2]);
        let g = Tensor::new(vec![2], vec![1.0, f32::NAN]).unwrap();
        let mut st = OptimizerState::new(0.9, LrSchedule::constant(0.1), &[&[2]]);
        let err = momentum_step(&mut [&mut p], &[g], &mut st, &["head.weight"]).unwrap_err();
        assert!(err.to_string().contains("head.weight"));
        assert_eq!(p.data(), &[0.0, 0.0]);
    }
}
