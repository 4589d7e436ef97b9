use super::Tensor;
use crate::error::{Error, Result};

/// Scalar loss value with its gradient with respect to the loss input.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub value: f64,
    pub grad: Tensor,
}

/// Smooth L1, summed: `0.5 x^2` for `|x| < 1`, else `|x| - 0.5`.
pub fn smooth_l1(x: &Tensor) -> LossOutput {
    let mut grad = x.clone();
    let mut value = 0.0f64;
    for g in grad.data_mut() {
        let v = *g;
        if v.abs() < 1.0 {
            value += 0.5 * (v as f64) * (v as f64);
        } else {
            value += v.abs() as f64 - 0.5;
            *g = v.signum();
        }
    }
    LossOutput { value, grad }
}

/// Softmax cross-entropy over the rows of `[n, classes]` logits, summed over
/// rows and divided by `normalizer`.
pub fn softmax_cross_entropy(
    logits: &Tensor,
    labels: &[usize],
    normalizer: f64,
) -> Result<LossOutput> {
    let (n, classes) = logits.dims2()?;
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{} labels for {n} logit rows",
            labels.len()
        )));
    }
    if !(normalizer > 0.0) {
        return Err(Error::InvalidInput(format!("normalizer {normalizer}")));
    }
    let mut grad = Tensor::zeros(logits.shape());
    let mut value = 0.0f64;
    for (row, (&label, g)) in labels
        .iter()
        .zip(grad.data_mut().chunks_mut(classes))
        .enumerate()
    {
        if label >= classes {
            return Err(Error::InvalidInput(format!(
                "label {label} out of {classes} classes"
            )));
        }
        let z = &logits.data()[row * classes..(row + 1) * classes];
        let max = z.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
        let denom: f64 = z.iter().map(|&v| (v as f64 - max).exp()).sum();
        let log_denom = denom.ln() + max;
        value += log_denom - z[label] as f64;
        for (c, gv) in g.iter_mut().enumerate() {
            let p = (z[c] as f64 - log_denom).exp();
            let target = if c == label { 1.0 } else { 0.0 };
            *gv = ((p - target) / normalizer) as f32;
        }
    }
    Ok(LossOutput {
        value: value / normalizer,
        grad,
    })
}

pub fn softmax_rows(logits: &Tensor) -> Result<Vec<Vec<f64>>> {
    let (_, classes) = logits.dims2()?;
    Ok(logits
        .data()
        .chunks(classes)
        .map(|z| {
            let max = z.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
            let e: Vec<f64> = z.iter().map(|&v| (v as f64 - max).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f32) -> Tensor {
        Tensor::new(vec![1], vec![v]).unwrap()
    }

    #[test]
    fn smooth_l1_fixtures() {
        assert_eq!(smooth_l1(&scalar(0.0)).value, 0.0);
        assert!((smooth_l1(&scalar(0.5)).value - 0.125).abs() < 1e-12);
        let out = smooth_l1(&scalar(2.0));
        assert!((out.value - 1.5).abs() < 1e-12);
        assert_eq!(out.grad.data(), &[1.0]);
        let neg = smooth_l1(&scalar(-3.0));
        assert_eq!(neg.grad.data(), &[-1.0]);
        assert_eq!(smooth_l1(&scalar(0.25)).grad.data(), &[0.25]);
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let logits = Tensor::zeros(&[1, 2]);
        let out = softmax_cross_entropy(&logits, &[1], 1.0).unwrap();
        assert!((out.value - std::f64::consts::LN_2).abs() < 1e-9);
        assert_eq!(out.grad.data(), &[0.5, -0.5]);
    }

    #[test]
    fn cross_entropy_rejects_bad_labels() {
        let logits = Tensor::zeros(&[2, 2]);
        assert!(softmax_cross_entropy(&logits, &[0], 1.0).is_err());
        assert!(softmax_cross_entropy(&logits, &[0, 2], 1.0).is_err());
    }
}
