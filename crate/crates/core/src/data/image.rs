use std::path::Path;

use image::imageops::{self, FilterType};
use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::geometry::{BBox, ScoredBox};
use crate::nn::Tensor;

const PIXEL_MEAN: f32 = 0.5;
const PIXEL_STD: f32 = 0.25;

/// Reads a PNG or binary PPM image.
pub fn load_image(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image(other),
    })?;
    Ok(img.to_rgb8())
}

/// Writes PNG, or binary PPM for a `.ppm` extension.
pub fn save_image(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image(other),
    })
}

/// Planar, normalised `[1, 3, H, W]` network input.
pub fn image_to_tensor(img: &RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0f32; 3 * w * h];
    for (i, p) in img.pixels().enumerate() {
        for c in 0..3 {
            data[c * w * h + i] = (p[c] as f32 / 255.0 - PIXEL_MEAN) / PIXEL_STD;
        }
    }
    Tensor::new(vec![1, 3, h, w], data).expect("image extents are positive")
}

/// Scale mapping between a square source frame and a square target frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResizeMapping {
    pub source: usize,
    pub target: usize,
}

impl ResizeMapping {
    pub fn ratio(&self) -> f64 {
        self.target as f64 / self.source as f64
    }

    pub fn forward(&self, b: &BBox) -> BBox {
        let r = self.ratio();
        b.scale(r, r)
    }

    pub fn inverse(&self, b: &BBox) -> BBox {
        let r = self.source as f64 / self.target as f64;
        b.scale(r, r)
    }
}

/// Bilinear resize of a square tile with its boxes scaled to match.
pub fn resize_with_boxes(
    tile: &RgbImage,
    boxes: &[BBox],
    target_size: usize,
) -> Result<(RgbImage, Vec<BBox>, ResizeMapping)> {
    if tile.width() != tile.height() {
        return Err(Error::InvalidInput(format!(
            "tile must be square, got {}x{}",
            tile.width(),
            tile.height()
        )));
    }
    if target_size == 0 {
        return Err(Error::InvalidInput("target size must be positive".into()));
    }
    let mapping = ResizeMapping {
        source: tile.width() as usize,
        target: target_size,
    };
    let resized = if mapping.source == target_size {
        tile.clone()
    } else {
        imageops::resize(
            tile,
            target_size as u32,
            target_size as u32,
            FilterType::Triangle,
        )
    };
    Ok((
        resized,
        boxes.iter().map(|b| mapping.forward(b)).collect(),
        mapping,
    ))
}

/// Draws one-pixel outlines of the given boxes.
pub fn draw_detections(img: &RgbImage, detections: &[ScoredBox]) -> RgbImage {
    let mut out = img.clone();
    let (w, h) = (img.width() as i64, img.height() as i64);
    let color = Rgb([255, 40, 40]);
    for d in detections {
        let x0 = (d.bbox.x_min.floor() as i64).clamp(0, w - 1);
        let y0 = (d.bbox.y_min.floor() as i64).clamp(0, h - 1);
        let x1 = ((d.bbox.x_max.ceil() as i64) - 1).clamp(0, w - 1);
        let y1 = ((d.bbox.y_max.ceil() as i64) - 1).clamp(0, h - 1);
        for x in x0..=x1 {
            out.put_pixel(x as u32, y0 as u32, color);
            out.put_pixel(x as u32, y1 as u32, color);
        }
        for y in y0..=y1 {
            out.put_pixel(x0 as u32, y as u32, color);
            out.put_pixel(x1 as u32, y as u32, color);
        }
    }
    out
}
