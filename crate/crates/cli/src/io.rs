//! Files the subcommands share: datasets, model checkpoints and detection tables.
//!
//! A checkpoint `model.psck` is accompanied by `model.json`, the detector
//! configuration it was trained with. Detection tables are CSV with the header
//! `x_min,y_min,x_max,y_max,score`, one detection per row, in the image frame.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use sha2::{Digest, Sha256};

use seedling_core::data::{
    load_image, read_annotation, AnnotationRecord, DatasetManifest, RecordRef,
};
use seedling_core::detector::{Detector, DetectorConfig, DetectorModel};
use seedling_core::geometry::{BBox, ScoredBox};
use seedling_core::nn::{save_checkpoint, Checkpoint};

pub const DETECTION_HEADER: &str = "x_min,y_min,x_max,y_max,score";

/// A manifest together with the directory its paths are relative to.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub path: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(path: &Path) -> Result<Self> {
        let manifest = DatasetManifest::load(path)
            .with_context(|| format!("loading manifest {}", path.display()))?;
        Ok(Dataset {
            path: path.to_path_buf(),
            manifest,
        })
    }

    pub fn base(&self) -> &Path {
        self.path.parent().unwrap_or(Path::new("."))
    }

    pub fn image_path(&self, r: &RecordRef) -> PathBuf {
        self.base().join(&r.image)
    }

    pub fn annotation_path(&self, r: &RecordRef) -> PathBuf {
        self.base().join(&r.annotation)
    }

    pub fn record(&self, id: &str) -> Option<&RecordRef> {
        self.manifest.records.iter().find(|r| r.id == id)
    }

    /// `(id, image, annotation)` for every record.
    pub fn load_all(&self) -> Result<Vec<(String, image::RgbImage, AnnotationRecord)>> {
        self.manifest
            .records
            .iter()
            .map(|r| {
                let img = load_image(&self.image_path(r))?;
                let ann = read_annotation(&self.annotation_path(r))?;
                Ok((r.id.clone(), img, ann))
            })
            .collect()
    }
}

pub fn config_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("json")
}

pub fn save_model(checkpoint: &Checkpoint, config: &DetectorConfig, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    save_checkpoint(checkpoint, path)?;
    std::fs::write(config_path(path), serde_json::to_string_pretty(config)?)?;
    Ok(())
}

/// The configuration stored beside `checkpoint`, or the default one.
pub fn load_config(checkpoint: &Path) -> Result<DetectorConfig> {
    let p = config_path(checkpoint);
    if !p.exists() {
        return Ok(DetectorConfig::default());
    }
    let text = std::fs::read_to_string(&p)?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
}

/// Checkpoint bytes, their SHA-256 and the parsed checkpoint.
pub fn read_checkpoint(path: &Path) -> Result<(Checkpoint, String)> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let hash = format!("{:x}", Sha256::digest(&bytes));
    let ckpt = Checkpoint::from_bytes(&bytes)
        .with_context(|| format!("parsing checkpoint {}", path.display()))?;
    Ok((ckpt, hash))
}

/// Inference-time settings that may override the stored configuration.
#[derive(Debug, Clone, Copy, Default)]
pub struct InferenceOverrides {
    pub score_threshold: Option<f64>,
    pub max_detections: Option<usize>,
}

pub struct LoadedModel {
    pub detector: Detector,
    pub hash: String,
}

pub fn load_detector(path: &Path, overrides: InferenceOverrides) -> Result<LoadedModel> {
    let mut config = load_config(path)?;
    if let Some(t) = overrides.score_threshold {
        if !(0.0..=1.0).contains(&t) {
            bail!("score threshold {t} outside [0, 1]");
        }
        config.score_threshold = t;
    }
    if let Some(m) = overrides.max_detections {
        config.max_detections = m;
    }
    let (ckpt, hash) = read_checkpoint(path)?;
    let model = DetectorModel::from_checkpoint(config, &ckpt)
        .with_context(|| format!("loading model from {}", path.display()))?;
    Ok(LoadedModel {
        detector: Detector::new(model)?,
        hash,
    })
}

pub fn render_detections(dets: &[ScoredBox]) -> String {
    let mut s = format!("{DETECTION_HEADER}\n");
    for d in dets {
        let b = &d.bbox;
        let _ = writeln!(
            s,
            "{:.3},{:.3},{:.3},{:.3},{:.6}",
            b.x_min, b.y_min, b.x_max, b.y_max, d.score
        );
    }
    s
}

pub fn parse_detections(text: &str) -> Result<Vec<ScoredBox>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(DETECTION_HEADER) {
        bail!("detection table must start with `{DETECTION_HEADER}`");
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let v: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .with_context(|| format!("detection row {}: {line}", i + 1))?;
            let [x0, y0, x1, y1, score] = v[..] else {
                bail!("detection row {}: expected 5 fields", i + 1);
            };
            if !(0.0..=1.0).contains(&score) {
                bail!("detection row {}: score {score} outside [0, 1]", i + 1);
            }
            Ok(ScoredBox::new(BBox::new(x0, y0, x1, y1)?, score, 1))
        })
        .collect()
}
