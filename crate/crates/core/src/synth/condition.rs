use image::RgbImage;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::noise::ValueNoise;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, StreamRng};

const CONTRAST_PIVOT: f64 = 128.0;

/// Standing water blended over the scene in smooth patches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaterTone {
    pub color: [f64; 3],
    /// Blend weight at the centre of a pond, in `[0, 1]`.
    pub strength: f64,
    /// Characteristic pond size in pixels.
    pub patch_scale: usize,
    /// Fraction of the scene under standing water, in `[0, 1]`.
    pub coverage: f64,
}

/// Irregular blobs painted over the scene (algae mats).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clutter {
    pub blobs_per_megapixel: f64,
    pub color_min: [f64; 3],
    pub color_max: [f64; 3],
    pub radius_min: f64,
    pub radius_max: f64,
    pub opacity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionProfile {
    pub name: String,
    pub brightness: f64,
    pub contrast: f64,
    pub noise_std: f64,
    pub clutter: Option<Clutter>,
    pub water: Option<WaterTone>,
}

pub const CONDITION_NAMES: [&str; 4] = ["clear", "cloudy", "rain", "algae-ponding"];

impl ConditionProfile {
    pub fn clear() -> Self {
        ConditionProfile {
            name: "clear".into(),
            brightness: 1.0,
            contrast: 1.0,
            noise_std: 0.0,
            clutter: None,
            water: None,
        }
    }

    pub fn cloudy() -> Self {
        ConditionProfile {
            name: "cloudy".into(),
            brightness: 0.8,
            noise_std: 2.0,
            ..Self::clear()
        }
    }

    pub fn rain() -> Self {
        ConditionProfile {
            name: "rain".into(),
            brightness: 0.75,
            contrast: 0.75,
            noise_std: 6.0,
            clutter: None,
            water: Some(WaterTone {
                color: [96.0, 98.0, 92.0],
                strength: 0.35,
                patch_scale: 96,
                coverage: 0.4,
            }),
        }
    }

    pub fn algae_ponding() -> Self {
        ConditionProfile {
            name: "algae-ponding".into(),
            brightness: 0.95,
            contrast: 0.9,
            noise_std: 3.0,
            clutter: Some(Clutter {
                blobs_per_megapixel: 700.0,
                color_min: [50.0, 120.0, 30.0],
                color_max: [100.0, 185.0, 80.0],
                radius_min: 1.5,
                radius_max: 5.0,
                opacity: 0.85,
            }),
            water: Some(WaterTone {
                color: [70.0, 112.0, 64.0],
                strength: 0.6,
                patch_scale: 80,
                coverage: 0.5,
            }),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "clear" => Ok(Self::clear()),
            "cloudy" => Ok(Self::cloudy()),
            "rain" => Ok(Self::rain()),
            "algae-ponding" => Ok(Self::algae_ponding()),
            other => Err(Error::InvalidInput(format!(
                "unknown condition `{other}` (expected one of {})",
                CONDITION_NAMES.join(", ")
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut values = vec![self.brightness, self.contrast, self.noise_std];
        if let Some(c) = &self.clutter {
            values.extend([c.blobs_per_megapixel, c.radius_min, c.radius_max, c.opacity]);
            values.extend(c.color_min.iter().chain(&c.color_max));
        }
        if let Some(w) = &self.water {
            values.extend([w.strength, w.coverage]);
            values.extend(w.color);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "condition `{}` has non-finite parameters",
                self.name
            )));
        }
        if self.brightness < 0.0 || self.contrast < 0.0 || self.noise_std < 0.0 {
            return Err(Error::InvalidInput(format!(
                "condition `{}` has negative multipliers",
                self.name
            )));
        }
        if let Some(c) = &self.clutter {
            if c.radius_min <= 0.0
                || c.radius_max < c.radius_min
                || !(0.0..=1.0).contains(&c.opacity)
            {
                return Err(Error::InvalidInput(format!(
                    "condition `{}` has invalid clutter",
                    self.name
                )));
            }
        }
        if let Some(w) = &self.water {
            if !(0.0..=1.0).contains(&w.strength)
                || !(0.0..=1.0).contains(&w.coverage)
                || w.patch_scale == 0
            {
                return Err(Error::InvalidInput(format!(
                    "condition `{}` has invalid water tone",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

/// Applies a condition profile; deterministic in `(image, profile, seed)`.
pub fn apply_condition(
    image: &RgbImage,
    profile: &ConditionProfile,
    seed: u64,
) -> Result<RgbImage> {
    profile.validate()?;
    Ok(apply_condition_with(
        image,
        profile,
        &mut stream_rng(seed, 0),
    ))
}

pub(crate) fn apply_condition_with(
    image: &RgbImage,
    profile: &ConditionProfile,
    rng: &mut StreamRng,
) -> RgbImage {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let mut buf: Vec<f64> = image.as_raw().iter().map(|&v| v as f64).collect();

    if let Some(water) = &profile.water {
        let field = ValueNoise::new(w, h, water.patch_scale, rng);
        // map the noise field so roughly `coverage` of the scene is submerged
        let lo = 1.0 - water.coverage;
        for y in 0..h {
            for x in 0..w {
                let n = field.sample(x as f64, y as f64);
                let t = ((n - lo) / 0.15).clamp(0.0, 1.0) * water.strength;
                if t > 0.0 {
                    let i = 3 * (y * w + x);
                    for c in 0..3 {
                        buf[i + c] = (1.0 - t) * buf[i + c] + t * water.color[c];
                    }
                }
            }
        }
    }

    if let Some(clutter) = &profile.clutter {
        let count = (clutter.blobs_per_megapixel * (w * h) as f64 / 1.0e6).round() as usize;
        for _ in 0..count {
            paint_blob(&mut buf, w, h, clutter, rng);
        }
    }

    let normal =
        (profile.noise_std > 0.0).then(|| Normal::new(0.0, profile.noise_std).expect("finite std"));
    let raw = buf
        .iter()
        .map(|&v| {
            let mut v =
                ((v - CONTRAST_PIVOT) * profile.contrast + CONTRAST_PIVOT) * profile.brightness;
            if let Some(n) = &normal {
                v += n.sample(rng);
            }
            v.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer matches extent")
}

/// A chain of overlapping discs along a random walk: filamentous, not leaf-like.
fn paint_blob(buf: &mut [f64], w: usize, h: usize, clutter: &Clutter, rng: &mut StreamRng) {
    let color: [f64; 3] = std::array::from_fn(|c| {
        if clutter.color_max[c] > clutter.color_min[c] {
            rng.random_range(clutter.color_min[c]..clutter.color_max[c])
        } else {
            clutter.color_min[c]
        }
    });
    let mut x = rng.random_range(0.0..w as f64);
    let mut y = rng.random_range(0.0..h as f64);
    let mut heading = rng.random_range(0.0..std::f64::consts::TAU);
    let discs = rng.random_range(4..=12);
    for _ in 0..discs {
        let r = rng.random_range(clutter.radius_min..=clutter.radius_max);
        let x0 = (x - r).floor().max(0.0) as usize;
        let y0 = (y - r).floor().max(0.0) as usize;
        let x1 = ((x + r).ceil().max(0.0) as usize).min(w);
        let y1 = ((y + r).ceil().max(0.0) as usize).min(h);
        for py in y0..y1 {
            for px in x0..x1 {
                let d = ((px as f64 + 0.5 - x).powi(2) + (py as f64 + 0.5 - y).powi(2)).sqrt();
                let cover = (r + 0.5 - d).clamp(0.0, 1.0) * clutter.opacity;
                if cover > 0.0 {
                    let i = 3 * (py * w + px);
                    for c in 0..3 {
                        buf[i + c] = (1.0 - cover) * buf[i + c] + cover * color[c];
                    }
                }
            }
        }
        heading += rng.random_range(-1.2..1.2);
        let stride = r * rng.random_range(0.8..1.6);
        x += stride * heading.cos();
        y += stride * heading.sin();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{render_scene, SceneSpec};

    fn background() -> RgbImage {
        let spec = SceneSpec {
            density: 0.0,
            ..SceneSpec::default()
        }
        .with_size(256);
        render_scene(&spec, 11).unwrap().image
    }

    fn channel_mean(img: &RgbImage, c: usize) -> f64 {
        img.pixels().map(|p| p[c] as f64).sum::<f64>() / (img.width() * img.height()) as f64
    }

    fn mean(img: &RgbImage) -> f64 {
        (0..3).map(|c| channel_mean(img, c)).sum::<f64>() / 3.0
    }

    #[test]
    fn clear_is_identity() {
        let img = background();
        assert_eq!(
            apply_condition(&img, &ConditionProfile::clear(), 5).unwrap(),
            img
        );
    }

    #[test]
    fn cloudy_scales_mean_brightness() {
        let img = background();
        let p = ConditionProfile::cloudy();
        let out = apply_condition(&img, &p, 5).unwrap();
        let ratio = mean(&out) / mean(&img);
        assert!((ratio - p.brightness).abs() < 0.01, "ratio {ratio}");
    }

    #[test]
    fn algae_raises_green_energy() {
        let img = background();
        let out = apply_condition(&img, &ConditionProfile::algae_ponding(), 5).unwrap();
        assert!(channel_mean(&out, 1) > channel_mean(&img, 1));
    }

    #[test]
    fn deterministic_and_presets_valid() {
        let img = background();
        for name in CONDITION_NAMES {
            let p = ConditionProfile::preset(name).unwrap();
            p.validate().unwrap();
            assert_eq!(
                apply_condition(&img, &p, 9).unwrap(),
                apply_condition(&img, &p, 9).unwrap()
            );
        }
        assert!(ConditionProfile::preset("fog").is_err());
        let bad = ConditionProfile {
            brightness: f64::NAN,
            ..ConditionProfile::clear()
        };
        assert!(bad.validate().is_err());
    }
}
