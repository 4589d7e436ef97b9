use image::{Rgb, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::condition::{apply_condition_with, ConditionProfile};
use super::noise::ValueNoise;
use crate::data::{AnnotatedObject, AnnotationRecord, PixelBox, Provenance, SEEDLING};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, StreamRng};

const SUPERSAMPLE: usize = 4;

/// Mean spacing with uniform jitter in `[-jitter, jitter]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spacing {
    pub mean: f64,
    pub jitter: f64,
}

/// Layout of a synthetic paddy tile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub row_spacing: Spacing,
    pub in_row_spacing: Spacing,
    pub radius_min: f64,
    pub radius_max: f64,
    /// Probability that a planting site along a row is sown at all.
    pub density: f64,
    /// Probability that a sown site fails to produce a seedling.
    pub dropout: f64,
    /// Maximum absolute row orientation, radians.
    pub max_row_angle: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            width: 512,
            height: 512,
            row_spacing: Spacing {
                mean: 56.0,
                jitter: 3.0,
            },
            in_row_spacing: Spacing {
                mean: 32.0,
                jitter: 2.5,
            },
            radius_min: 4.0,
            radius_max: 10.0,
            density: 1.0,
            dropout: 0.1,
            max_row_angle: 0.15,
        }
    }
}

impl SceneSpec {
    pub fn with_size(mut self, size: usize) -> Self {
        self.width = size;
        self.height = size;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.row_spacing.mean,
            self.row_spacing.jitter,
            self.in_row_spacing.mean,
            self.in_row_spacing.jitter,
            self.radius_min,
            self.radius_max,
            self.density,
            self.dropout,
            self.max_row_angle,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "scene spec has non-finite parameters".into(),
            ));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput(
                "scene must have positive extent".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.density) || !(0.0..=1.0).contains(&self.dropout) {
            return Err(Error::InvalidInput(
                "density and dropout must lie in [0, 1]".into(),
            ));
        }
        if self.radius_min <= 0.0 || self.radius_max < self.radius_min {
            return Err(Error::InvalidInput(format!(
                "invalid radius range [{}, {}]",
                self.radius_min, self.radius_max
            )));
        }
        if self.row_spacing.jitter < 0.0 || self.in_row_spacing.jitter < 0.0 {
            return Err(Error::InvalidInput("jitter must be non-negative".into()));
        }
        let diameter = 2.0 * self.radius_max;
        for (name, s) in [("row", self.row_spacing), ("in-row", self.in_row_spacing)] {
            if s.mean - 2.0 * s.jitter <= diameter {
                return Err(Error::InvalidInput(format!(
                    "{name} spacing {} with jitter {} lets seedlings of radius {} overlap",
                    s.mean, s.jitter, self.radius_max
                )));
            }
        }
        if self.width as f64 <= diameter || self.height as f64 <= diameter {
            return Err(Error::InvalidInput(
                "scene is smaller than one seedling".into(),
            ));
        }
        Ok(())
    }
}

/// One leaf blade of a plant.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Leaf {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    theta: f64,
    color: [f64; 3],
}

impl Leaf {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.theta.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }

    /// Exact axis-aligned extent of the rotated ellipse.
    fn bounds(&self) -> [f64; 4] {
        let (s, c) = self.theta.sin_cos();
        let hw = ((self.a * c).powi(2) + (self.b * s).powi(2)).sqrt();
        let hh = ((self.a * s).powi(2) + (self.b * c).powi(2)).sqrt();
        [self.cx - hw, self.cy - hh, self.cx + hw, self.cy + hh]
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Plant {
    leaves: Vec<Leaf>,
}

impl Plant {
    fn bounds(&self) -> [f64; 4] {
        self.leaves.iter().fold(
            [
                f64::INFINITY,
                f64::INFINITY,
                f64::NEG_INFINITY,
                f64::NEG_INFINITY,
            ],
            |acc, l| {
                let b = l.bounds();
                [
                    acc[0].min(b[0]),
                    acc[1].min(b[1]),
                    acc[2].max(b[2]),
                    acc[3].max(b[3]),
                ]
            },
        )
    }
}

/// Rendered scene before any condition is applied.
#[derive(Debug, Clone)]
pub struct SceneLayers {
    pub image: RgbImage,
    /// Per-pixel plant index plus one; 0 marks background.
    pub instance_mask: Vec<u32>,
    pub record: AnnotationRecord,
}

fn jitter(rng: &mut StreamRng, s: Spacing) -> f64 {
    if s.jitter > 0.0 {
        rng.random_range(-s.jitter..=s.jitter)
    } else {
        0.0
    }
}

fn layout_plants(spec: &SceneSpec, rng: &mut StreamRng) -> Vec<Plant> {
    let angle = if spec.max_row_angle > 0.0 {
        rng.random_range(-spec.max_row_angle..=spec.max_row_angle)
    } else {
        0.0
    };
    let (sin, cos) = angle.sin_cos();
    let (w, h) = (spec.width as f64, spec.height as f64);
    let (cx, cy) = (w / 2.0, h / 2.0);
    // rows are laid out in a rotated frame large enough to cover the tile
    let reach = (w * w + h * h).sqrt() / 2.0 + spec.row_spacing.mean;
    let phase_row = rng.random_range(0.0..spec.row_spacing.mean);
    let mut plants = Vec::new();
    let mut v = -reach + phase_row;
    while v <= reach {
        let row_offset = jitter(rng, spec.row_spacing);
        let phase = rng.random_range(0.0..spec.in_row_spacing.mean);
        let mut u = -reach + phase;
        while u <= reach {
            let du = jitter(rng, spec.in_row_spacing);
            let sown = rng.random::<f64>() < spec.density;
            let survives = rng.random::<f64>() >= spec.dropout;
            let radius = rng.random_range(spec.radius_min..=spec.radius_max);
            let (pu, pv) = (u + du, v + row_offset);
            let px = cx + pu * cos - pv * sin;
            let py = cy + pu * sin + pv * cos;
            let inside =
                px - radius >= 0.0 && py - radius >= 0.0 && px + radius <= w && py + radius <= h;
            if sown && survives && inside {
                plants.push(grow_plant(px, py, radius, rng));
            }
            u += spec.in_row_spacing.mean;
        }
        v += spec.row_spacing.mean;
    }
    plants
}

fn grow_plant(x: f64, y: f64, radius: f64, rng: &mut StreamRng) -> Plant {
    let n = rng.random_range(2..=5);
    let base_angle = rng.random_range(0.0..std::f64::consts::PI);
    let leaves = (0..n)
        .map(|i| {
            let a = radius * rng.random_range(0.45..0.7);
            let b = a * rng.random_range(0.3..0.6);
            let theta = base_angle
                + i as f64 * std::f64::consts::PI / n as f64
                + rng.random_range(-0.25..0.25);
            // offset the blade along its axis, keeping it inside the plant disc
            let offset = (radius - a) * rng.random_range(0.0..1.0);
            let dir = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let (s, c) = theta.sin_cos();
            let color = [
                rng.random_range(55.0..95.0),
                rng.random_range(135.0..190.0),
                rng.random_range(35.0..75.0),
            ];
            Leaf {
                cx: x + dir * offset * c,
                cy: y + dir * offset * s,
                a,
                b,
                theta,
                color,
            }
        })
        .collect();
    Plant { leaves }
}

/// Muddy-water background with two octaves of smooth noise.
fn render_background(width: usize, height: usize, rng: &mut StreamRng) -> RgbImage {
    let coarse = ValueNoise::new(width, height, 64, rng);
    let fine = ValueNoise::new(width, height, 12, rng);
    let base = [
        rng.random_range(100.0..125.0),
        rng.random_range(95.0..115.0),
        rng.random_range(70.0..90.0),
    ];
    let mut img = RgbImage::new(width as u32, height as u32);
    for y in 0..height {
        for x in 0..width {
            let n = 22.0 * (coarse.sample(x as f64, y as f64) - 0.5)
                + 10.0 * (fine.sample(x as f64, y as f64) - 0.5);
            let px = [
                (base[0] + n).clamp(0.0, 255.0).round() as u8,
                (base[1] + n * 0.9).clamp(0.0, 255.0).round() as u8,
                (base[2] + n * 0.7).clamp(0.0, 255.0).round() as u8,
            ];
            img.put_pixel(x as u32, y as u32, Rgb(px));
        }
    }
    img
}

fn render_plant(img: &mut RgbImage, mask: &mut [u32], plant: &Plant, label: u32) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let b = plant.bounds();
    let x0 = (b[0].floor() as i64).max(0);
    let y0 = (b[1].floor() as i64).max(0);
    let x1 = (b[2].ceil() as i64).min(w);
    let y1 = (b[3].ceil() as i64).min(h);
    let step = 1.0 / SUPERSAMPLE as f64;
    for py in y0..y1 {
        for px in x0..x1 {
            let mut acc = [0.0f64; 3];
            let mut hits = 0usize;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let x = px as f64 + (sx as f64 + 0.5) * step;
                    let y = py as f64 + (sy as f64 + 0.5) * step;
                    // the last blade drawn wins where blades overlap
                    if let Some(leaf) = plant.leaves.iter().rev().find(|l| l.contains(x, y)) {
                        for (a, v) in acc.iter_mut().zip(leaf.color) {
                            *a += v;
                        }
                        hits += 1;
                    }
                }
            }
            if hits == 0 {
                continue;
            }
            let total = (SUPERSAMPLE * SUPERSAMPLE) as f64;
            let alpha = hits as f64 / total;
            let pixel = img.get_pixel_mut(px as u32, py as u32);
            for c in 0..3 {
                let fg = acc[c] / hits as f64;
                pixel[c] = (alpha * fg + (1.0 - alpha) * pixel[c] as f64)
                    .round()
                    .clamp(0.0, 255.0) as u8;
            }
            mask[(py * w + px) as usize] = label;
        }
    }
}

/// Plant geometry and clean rendering, before any condition perturbation.
pub fn render_scene(spec: &SceneSpec, seed: u64) -> Result<SceneLayers> {
    spec.validate()?;
    let mut geometry_rng = stream_rng(seed, 0);
    let plants = layout_plants(spec, &mut geometry_rng);
    let mut texture_rng = stream_rng(seed, 1);
    let mut image = render_background(spec.width, spec.height, &mut texture_rng);
    let mut instance_mask = vec![0u32; spec.width * spec.height];
    let mut record = AnnotationRecord::new(
        format!("scene_{seed:016x}"),
        spec.width as u32,
        spec.height as u32,
    );
    record.provenance = Provenance::Manual;
    for (i, plant) in plants.iter().enumerate() {
        render_plant(&mut image, &mut instance_mask, plant, i as u32 + 1);
        let b = plant.bounds();
        record.objects.push(AnnotatedObject {
            name: SEEDLING.to_string(),
            bbox: PixelBox {
                x_min: (b[0].floor() as i64).max(0),
                y_min: (b[1].floor() as i64).max(0),
                x_max: (b[2].ceil() as i64).min(spec.width as i64),
                y_max: (b[3].ceil() as i64).min(spec.height as i64),
            },
        });
    }
    Ok(SceneLayers {
        image,
        instance_mask,
        record,
    })
}

/// Renders a scene and applies the condition profile on top of it.
///
/// The annotation depends only on `(spec, seed)`, never on the profile.
pub fn generate_scene(
    spec: &SceneSpec,
    profile: &ConditionProfile,
    seed: u64,
) -> Result<(RgbImage, AnnotationRecord)> {
    profile.validate()?;
    let layers = render_scene(spec, seed)?;
    let mut rng = stream_rng(seed, 2);
    let image = apply_condition_with(&layers.image, profile, &mut rng);
    Ok((image, layers.record))
}
