//! Mosaic tessellation into fixed-size tiles and the reverse mapping of
//! tile-frame detections.
//!
//! A serialized index looks like:
//! ```text
//! mosaic_id field_a
//! tile_size 512
//! overlap 64
//! field_a_t0000 0 0
//! field_a_t0001 448 0
//! ```

use std::fmt::Write as _;

use image::RgbImage;

use super::annotation::{AnnotatedObject, AnnotationRecord, PixelBox};
use crate::error::{Error, Result};
use crate::geometry::{nms, ScoredBox};

pub const DEFAULT_TILE_SIZE: usize = 512;
pub const DEFAULT_OVERLAP: usize = 64;
pub const DEFAULT_MIN_VISIBLE_FRACTION: f64 = 0.25;
pub const DEFAULT_SEAM_NMS_IOU: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileOrigin {
    pub id: String,
    pub x: usize,
    pub y: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileIndex {
    pub mosaic_id: String,
    pub tile_size: usize,
    pub overlap: usize,
    pub tiles: Vec<TileOrigin>,
}

/// Tile origins along one axis; the last tile is shifted inward to end at `length`.
pub fn axis_origins(length: usize, tile_size: usize, overlap: usize) -> Result<Vec<usize>> {
    if tile_size == 0 || overlap >= tile_size {
        return Err(Error::InvalidInput(format!(
            "overlap {overlap} must be smaller than tile size {tile_size}"
        )));
    }
    if length < tile_size {
        return Err(Error::InvalidInput(format!(
            "mosaic extent {length} is smaller than tile size {tile_size}"
        )));
    }
    let step = tile_size - overlap;
    let count = (length - tile_size).div_ceil(step) + 1;
    let mut origins: Vec<usize> = (0..count).map(|i| i * step).collect();
    *origins.last_mut().expect("count >= 1") = length - tile_size;
    Ok(origins)
}

impl TileIndex {
    pub fn build(
        mosaic_id: &str,
        width: usize,
        height: usize,
        tile_size: usize,
        overlap: usize,
    ) -> Result<Self> {
        let xs = axis_origins(width, tile_size, overlap)?;
        let ys = axis_origins(height, tile_size, overlap)?;
        let mut tiles = Vec::with_capacity(xs.len() * ys.len());
        for &y in &ys {
            for &x in &xs {
                tiles.push(TileOrigin {
                    id: format!("{mosaic_id}_t{:04}", tiles.len()),
                    x,
                    y,
                });
            }
        }
        Ok(TileIndex {
            mosaic_id: mosaic_id.to_string(),
            tile_size,
            overlap,
            tiles,
        })
    }

    pub fn tile(&self, id: &str) -> Option<&TileOrigin> {
        self.tiles.iter().find(|t| t.id == id)
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "mosaic_id {}\ntile_size {}\noverlap {}\n",
            self.mosaic_id, self.tile_size, self.overlap
        );
        for t in &self.tiles {
            let _ = writeln!(s, "{} {} {}", t.id, t.x, t.y);
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad =
            |line: usize, what: &str| Error::Serde(format!("tile index line {}: {what}", line + 1));
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let mut header = |key: &str| -> Result<String> {
            let (n, line) = lines
                .next()
                .ok_or_else(|| Error::Serde(format!("tile index missing {key}")))?;
            match line.split_once(char::is_whitespace) {
                Some((k, v)) if k == key => Ok(v.trim().to_string()),
                _ => Err(bad(n, &format!("expected {key}"))),
            }
        };
        let mosaic_id = header("mosaic_id")?;
        let tile_size = header("tile_size")?
            .parse()
            .map_err(|_| Error::Serde("tile index: tile_size is not an integer".into()))?;
        let overlap = header("overlap")?
            .parse()
            .map_err(|_| Error::Serde("tile index: overlap is not an integer".into()))?;
        let mut tiles = Vec::new();
        for (n, line) in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let [id, x, y] = parts[..] else {
                return Err(bad(n, "expected `tile_id x y`"));
            };
            let x = x
                .parse()
                .map_err(|_| bad(n, "x origin is not an integer"))?;
            let y = y
                .parse()
                .map_err(|_| bad(n, "y origin is not an integer"))?;
            tiles.push(TileOrigin {
                id: id.to_string(),
                x,
                y,
            });
        }
        Ok(TileIndex {
            mosaic_id,
            tile_size,
            overlap,
            tiles,
        })
    }
}

/// Cuts `mosaic` into overlapping square tiles, all exactly `tile_size`.
pub fn tile_image(
    mosaic: &RgbImage,
    mosaic_id: &str,
    tile_size: usize,
    overlap: usize,
) -> Result<(Vec<RgbImage>, TileIndex)> {
    let index = TileIndex::build(
        mosaic_id,
        mosaic.width() as usize,
        mosaic.height() as usize,
        tile_size,
        overlap,
    )?;
    let tiles = index
        .tiles
        .iter()
        .map(|t| {
            image::imageops::crop_imm(
                mosaic,
                t.x as u32,
                t.y as u32,
                tile_size as u32,
                tile_size as u32,
            )
            .to_image()
        })
        .collect();
    Ok((tiles, index))
}

/// Splits a mosaic-frame record into one record per tile.
///
/// A box is kept in a tile when its clipped area is at least
/// `min_visible_fraction` of its full area.
pub fn tile_boxes(
    record: &AnnotationRecord,
    index: &TileIndex,
    min_visible_fraction: f64,
) -> Vec<AnnotationRecord> {
    let ts = index.tile_size as i64;
    index
        .tiles
        .iter()
        .map(|t| {
            let (tx, ty) = (t.x as i64, t.y as i64);
            let mut out =
                AnnotationRecord::new(t.id.clone(), index.tile_size as u32, index.tile_size as u32);
            out.provenance = record.provenance;
            for obj in &record.objects {
                let b = obj.bbox;
                let clipped = PixelBox {
                    x_min: b.x_min.max(tx) - tx,
                    y_min: b.y_min.max(ty) - ty,
                    x_max: b.x_max.min(tx + ts) - tx,
                    y_max: b.y_max.min(ty + ts) - ty,
                };
                if clipped.x_min >= clipped.x_max || clipped.y_min >= clipped.y_max {
                    continue;
                }
                if (clipped.area() as f64) >= min_visible_fraction * b.area() as f64 {
                    out.objects.push(AnnotatedObject {
                        name: obj.name.clone(),
                        bbox: clipped,
                    });
                }
            }
            out
        })
        .collect()
}

/// Maps tile-frame detections into the mosaic frame and removes seam duplicates.
pub fn stitch_detections(
    per_tile: &[(String, Vec<ScoredBox>)],
    index: &TileIndex,
    seam_nms_iou: f64,
) -> Result<Vec<ScoredBox>> {
    let mut all = Vec::new();
    for (id, dets) in per_tile {
        let t = index
            .tile(id)
            .ok_or_else(|| Error::InvalidInput(format!("unknown tile id {id}")))?;
        all.extend(dets.iter().map(|d| ScoredBox {
            bbox: d.bbox.translate(t.x as f64, t.y as f64),
            ..*d
        }));
    }
    Ok(nms(&all, seam_nms_iou))
}
