use std::path::Path;

use image::imageops::{self, FilterType};
use image::RgbImage;
use rand::Rng;

use super::condition::ConditionProfile;
use super::scene::{generate_scene, SceneSpec};
use crate::data::{
    write_annotation, AcquisitionMetadata, AnnotatedObject, AnnotationRecord, DatasetManifest,
    PixelBox, RecordRef,
};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::rng::{derive_seed, stream_rng};

pub const PAPER_SHAPE_TRAIN: usize = 273;
pub const PAPER_SHAPE_VAL: usize = 60;

/// One generated tile held in memory.
#[derive(Debug, Clone)]
pub struct SyntheticTile {
    pub id: String,
    pub image: RgbImage,
    pub record: AnnotationRecord,
}

pub fn scene_seed(seed: u64, split: &str, index: usize) -> u64 {
    derive_seed(seed, &format!("{split}/{index}"))
}

/// Generates `n_tiles` scenes for `split` without touching the disk.
pub fn generate_tiles(
    spec: &SceneSpec,
    profile: &ConditionProfile,
    n_tiles: usize,
    seed: u64,
    split: &str,
    exec: Execution,
) -> Result<Vec<SyntheticTile>> {
    spec.validate()?;
    profile.validate()?;
    exec.map_range(n_tiles, |i| {
        let id = format!("{split}_{i:04}");
        let (image, mut record) = generate_scene(spec, profile, scene_seed(seed, split, i))?;
        record.image_id = id.clone();
        Ok(SyntheticTile { id, image, record })
    })
    .into_iter()
    .collect()
}

/// Writes tiles as `images/<id>.png` and `annotations/<id>.xml` plus
/// `<split>.jsonl` under `out_dir`, returning the manifest.
pub fn write_tiles(
    tiles: &[SyntheticTile],
    split: &str,
    metadata: AcquisitionMetadata,
    out_dir: &Path,
    exec: Execution,
) -> Result<DatasetManifest> {
    for sub in ["images", "annotations"] {
        let dir = out_dir.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    exec.map(tiles, |t| -> Result<()> {
        crate::data::save_image(
            &t.image,
            &out_dir.join("images").join(format!("{}.png", t.id)),
        )?;
        write_annotation(
            &t.record,
            &out_dir.join("annotations").join(format!("{}.xml", t.id)),
        )
    })
    .into_iter()
    .collect::<Result<()>>()?;
    let mut manifest = DatasetManifest::new(split, metadata);
    for t in tiles {
        manifest.push(RecordRef {
            id: t.id.clone(),
            image: format!("images/{}.png", t.id).into(),
            annotation: format!("annotations/{}.xml", t.id).into(),
        })?;
    }
    manifest.save(&out_dir.join(format!("{split}.jsonl")))?;
    Ok(manifest)
}

pub fn condition_metadata(profile: &ConditionProfile) -> AcquisitionMetadata {
    AcquisitionMetadata {
        date: None,
        weather: Some(profile.name.clone()),
        gsd_mm_per_px: None,
        condition: Some(profile.name.clone()),
    }
}

pub fn generate_dataset(
    spec: &SceneSpec,
    profile: &ConditionProfile,
    n_tiles: usize,
    seed: u64,
    split: &str,
    out_dir: &Path,
    exec: Execution,
) -> Result<DatasetManifest> {
    let tiles = generate_tiles(spec, profile, n_tiles, seed, split, exec)?;
    write_tiles(&tiles, split, condition_metadata(profile), out_dir, exec)
}

/// Clear-condition train/val pair with the 273/60 split sizes.
pub fn generate_paper_shape(
    spec: &SceneSpec,
    seed: u64,
    out_dir: &Path,
    exec: Execution,
) -> Result<(DatasetManifest, DatasetManifest)> {
    let clear = ConditionProfile::clear();
    let train = generate_dataset(
        spec,
        &clear,
        PAPER_SHAPE_TRAIN,
        seed,
        "train",
        out_dir,
        exec,
    )?;
    let val = generate_dataset(spec, &clear, PAPER_SHAPE_VAL, seed, "val", out_dir, exec)?;
    Ok((train, val))
}

/// Seedling-vs-background patch for backbone pretraining.
#[derive(Debug, Clone)]
pub struct Patch {
    pub image: RgbImage,
    pub seedling: bool,
}

/// Balanced patch set: crops centred near a seedling, and crops of
/// seedling-free scenes. Crops of `crop_size` are resized to `out_size`.
pub fn generate_patches(
    spec: &SceneSpec,
    n_per_class: usize,
    crop_size: usize,
    out_size: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<Patch>> {
    spec.validate()?;
    if crop_size == 0 || crop_size > spec.width.min(spec.height) || out_size == 0 {
        return Err(Error::InvalidInput(format!(
            "patch crop {crop_size} does not fit a {}x{} scene",
            spec.width, spec.height
        )));
    }
    let clear = ConditionProfile::clear();
    let empty = SceneSpec {
        density: 0.0,
        ..spec.clone()
    };
    let patches: Vec<Result<Patch>> = exec.map_range(2 * n_per_class, |i| {
        let positive = i % 2 == 0;
        let s = scene_seed(seed, "patch", i);
        let mut rng = stream_rng(s, 7);
        let (scene, record) = generate_scene(if positive { spec } else { &empty }, &clear, s)?;
        let (w, h) = (scene.width() as i64, scene.height() as i64);
        let half = crop_size as i64 / 2;
        let (cx, cy) = match record
            .objects
            .get(rng.random_range(0..record.objects.len().max(1)))
        {
            Some(obj) if positive => {
                let b = obj.bbox;
                let jitter = (crop_size as i64 / 8).max(1);
                (
                    (b.x_min + b.x_max) / 2 + rng.random_range(-jitter..=jitter),
                    (b.y_min + b.y_max) / 2 + rng.random_range(-jitter..=jitter),
                )
            }
            _ => (
                rng.random_range(half..=w - half),
                rng.random_range(half..=h - half),
            ),
        };
        let x = (cx - half).clamp(0, w - crop_size as i64) as u32;
        let y = (cy - half).clamp(0, h - crop_size as i64) as u32;
        let crop = imageops::crop_imm(&scene, x, y, crop_size as u32, crop_size as u32).to_image();
        let image = if crop_size == out_size {
            crop
        } else {
            imageops::resize(
                &crop,
                out_size as u32,
                out_size as u32,
                FilterType::Triangle,
            )
        };
        Ok(Patch {
            image,
            seedling: positive && !record.objects.is_empty(),
        })
    });
    patches.into_iter().collect()
}

/// Writes patches as a manifest whose annotations carry one whole-patch box
/// for seedling patches and none for background patches.
pub fn write_patches(
    patches: &[Patch],
    out_dir: &Path,
    exec: Execution,
) -> Result<DatasetManifest> {
    let tiles: Vec<SyntheticTile> = patches
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let id = format!("patch_{i:05}");
            let (w, h) = p.image.dimensions();
            let mut record = AnnotationRecord::new(id.clone(), w, h);
            if p.seedling {
                record.objects.push(AnnotatedObject {
                    name: crate::data::SEEDLING.into(),
                    bbox: PixelBox {
                        x_min: 0,
                        y_min: 0,
                        x_max: w as i64,
                        y_max: h as i64,
                    },
                });
            }
            SyntheticTile {
                id,
                image: p.image.clone(),
                record,
            }
        })
        .collect();
    write_tiles(
        &tiles,
        "pretext",
        AcquisitionMetadata::default(),
        out_dir,
        exec,
    )
}
