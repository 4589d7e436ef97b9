use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seconds spent in each stage for one image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageSample {
    pub preprocess: f64,
    pub inference: f64,
    pub visualization: f64,
}

impl StageSample {
    pub fn total(&self) -> f64 {
        self.preprocess + self.inference + self.visualization
    }
}

/// Mean per-image stage latencies, their sum and the implied frame rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub preprocess: f64,
    pub inference: f64,
    pub visualization: f64,
    pub total: f64,
    pub fps: f64,
    pub samples: Vec<StageSample>,
}

impl TimingReport {
    pub fn from_samples(samples: Vec<StageSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidInput(
                "timing needs at least one image".into(),
            ));
        }
        let n = samples.len() as f64;
        let mean = |f: fn(&StageSample) -> f64| samples.iter().map(f).sum::<f64>() / n;
        let preprocess = mean(|s| s.preprocess);
        let inference = mean(|s| s.inference);
        let visualization = mean(|s| s.visualization);
        let total = preprocess + inference + visualization;
        Ok(TimingReport {
            preprocess,
            inference,
            visualization,
            total,
            fps: if total > 0.0 {
                1.0 / total
            } else {
                f64::INFINITY
            },
            samples,
        })
    }
}

/// Runs the three stages on every image, timing each with a monotonic clock.
pub fn timing_harness<I, P, D>(
    images: &[I],
    mut preprocess: impl FnMut(&I) -> Result<P>,
    mut inference: impl FnMut(&P) -> Result<D>,
    mut visualization: impl FnMut(&I, &D) -> Result<()>,
) -> Result<TimingReport> {
    if images.is_empty() {
        return Err(Error::InvalidInput(
            "timing needs at least one image".into(),
        ));
    }
    let mut samples = Vec::with_capacity(images.len());
    for image in images {
        let t0 = Instant::now();
        let prepared = preprocess(image)?;
        let t1 = Instant::now();
        let output = inference(&prepared)?;
        let t2 = Instant::now();
        visualization(image, &output)?;
        let t3 = Instant::now();
        samples.push(StageSample {
            preprocess: (t1 - t0).as_secs_f64(),
            inference: (t2 - t1).as_secs_f64(),
            visualization: (t3 - t2).as_secs_f64(),
        });
    }
    TimingReport::from_samples(samples)
}
