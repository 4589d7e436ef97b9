//! Subcommand definitions and their implementations.
//!
//! Progress goes to stderr as JSON lines (`{"event": ..., ...}`); machine
//! output goes to stdout or to files under `--out`.

use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use seedling_core::data::{
    draw_detections, image_to_tensor, load_image, read_annotation, resize_with_boxes, save_image,
    stitch_detections, tile_boxes, tile_image, write_annotation, AnnotationRecord, DatasetManifest,
    Provenance, RecordRef, TileIndex, DEFAULT_MIN_VISIBLE_FRACTION,
};
use seedling_core::detector::{
    prepare_samples, pretext_pretrain, train, Detector, DetectorConfig, DetectorModel,
    PretextConfig, TrainConfig, ValidationSet,
};
use seedling_core::eval::{
    evaluate, export_report, render_metrics, timing_harness, ImageEval, ReportEntry,
};
use seedling_core::rng::stream_rng;
use seedling_core::synth::{
    generate_dataset, generate_paper_shape, generate_patches, generate_scene, write_patches,
    ConditionProfile, SceneSpec,
};
use seedling_core::{Execution, Result as CoreResult};

use crate::io::{
    load_detector, parse_detections, read_checkpoint, render_detections, save_model, Dataset,
    InferenceOverrides,
};
use crate::service::{serve, ServiceState};
use crate::store::{AnnotationStore, TaskStatus};

#[derive(Debug, Parser)]
#[command(
    name = "seedling",
    version,
    about = "Seedling detection pipeline and review service"
)]
pub struct Cli {
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic tiles, pretext patches or a mosaic.
    Synth(SynthArgs),
    /// Cut a mosaic into overlapping tiles.
    Tile(TileArgs),
    /// Pretrain the backbone on seedling/background patches.
    Pretrain(PretrainArgs),
    /// Train the detector.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Write per-image detection tables.
    Infer(InferArgs),
    /// Merge per-tile detections into the mosaic frame.
    Stitch(StitchArgs),
    /// Serve the review API.
    Serve(ServeArgs),
    /// Export verified review annotations as a dataset.
    ReviewExport(ReviewExportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// 273 train + 60 validation clear tiles.
    PaperShape,
    Clear,
    Cloudy,
    Rain,
    AlgaePonding,
    /// Balanced seedling/background patches for pretraining.
    Patches,
    /// One large scene with its annotation.
    Mosaic,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub preset: Preset,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Tiles for a condition preset, patches per class for `patches`.
    #[arg(long, default_value_t = 60)]
    pub count: usize,
    /// Side of generated tiles in pixels.
    #[arg(long, default_value_t = 512)]
    pub tile_size: usize,
    /// Side of the `mosaic` preset in pixels.
    #[arg(long, default_value_t = 2048)]
    pub mosaic_size: usize,
    /// Split name for condition presets.
    #[arg(long)]
    pub split: Option<String>,
}

#[derive(Debug, Args)]
pub struct TileArgs {
    /// Mosaic image (PNG or PPM).
    #[arg(long)]
    pub image: PathBuf,
    /// Mosaic-frame annotation to split alongside.
    #[arg(long)]
    pub annotation: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    pub tile_size: usize,
    #[arg(long, default_value_t = 64)]
    pub overlap: usize,
    #[arg(long, default_value_t = DEFAULT_MIN_VISIBLE_FRACTION)]
    pub min_visible: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// Patch manifest; a record with any object is a seedling patch.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 300)]
    pub steps: u64,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Backbone checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Validation manifest for periodic AP and best-checkpoint selection.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Pretrained backbone to start from.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    pub steps: u64,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f32,
    /// Steps at which the learning rate drops tenfold.
    #[arg(long, value_delimiter = ',', default_value = "1500")]
    pub lr_boundaries: Vec<u64>,
    #[arg(long, default_value_t = 250)]
    pub eval_every: u64,
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
    #[arg(long, default_value_t = 640)]
    pub input_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint to write; the configuration goes beside it as `.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
    /// Threshold for precision, recall, F1 and mIoU; AP uses every detection.
    #[arg(long, default_value_t = 0.5)]
    pub score_threshold: f64,
    #[arg(long)]
    pub max_detections: Option<usize>,
    /// Also write metrics.toml and the PR curve here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Manifest of images to run on.
    #[arg(long, required_unless_present = "image", conflicts_with = "image")]
    pub dataset: Option<PathBuf>,
    /// A single image.
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub score_threshold: Option<f64>,
    #[arg(long, default_value_t = 200)]
    pub max_detections: usize,
    /// Also write PNGs with the detections drawn.
    #[arg(long)]
    pub visualize: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StitchArgs {
    /// Tile index written by `tile`.
    #[arg(long)]
    pub index: PathBuf,
    /// Directory of `<tile_id>.csv` detection tables.
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
    /// Output table; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Review store directory; defaults to `review/` beside the manifest.
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
}

#[derive(Debug, Args)]
pub struct ReviewExportArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Failures the caller should report as a usage error rather than a fault.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

macro_rules! out {
    ($($arg:tt)*) => {
        emit(format_args!($($arg)*))
    };
}

macro_rules! outln {
    ($($arg:tt)*) => {
        emit(format_args!("{}\n", format_args!($($arg)*)))
    };
}

/// Writes machine output to stdout; a closed pipe ends output quietly.
fn emit(args: std::fmt::Arguments<'_>) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    match stdout.write_fmt(args).and_then(|_| stdout.flush()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

pub fn progress(event: &str, fields: serde_json::Value) {
    let mut line = json!({ "event": event });
    if let (Some(obj), serde_json::Value::Object(extra)) = (line.as_object_mut(), fields) {
        obj.extend(extra);
    }
    let _ = writeln!(std::io::stderr().lock(), "{line}");
}

pub fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    match cli.command {
        Command::Synth(a) => synth(a, exec),
        Command::Tile(a) => tile(a),
        Command::Pretrain(a) => pretrain(a, exec),
        Command::Train(a) => train_cmd(a, exec),
        Command::Eval(a) => eval(a),
        Command::Infer(a) => infer(a),
        Command::Stitch(a) => stitch(a),
        Command::Serve(a) => serve_cmd(a),
        Command::ReviewExport(a) => review_export_cmd(a),
    }
}

fn manifest_summary(path: &Path, m: &DatasetManifest) -> Result<()> {
    outln!(
        "{}",
        json!({ "split": m.split, "records": m.len(), "manifest": path })
    )
}

fn synth(a: SynthArgs, exec: Execution) -> Result<()> {
    let spec = SceneSpec::default().with_size(a.tile_size);
    match a.preset {
        Preset::PaperShape => {
            let (train, val) = generate_paper_shape(&spec, a.seed, &a.out, exec)?;
            manifest_summary(&a.out.join("train.jsonl"), &train)?;
            manifest_summary(&a.out.join("val.jsonl"), &val)?;
        }
        Preset::Clear | Preset::Cloudy | Preset::Rain | Preset::AlgaePonding => {
            let name = a
                .preset
                .to_possible_value()
                .expect("no skipped variants")
                .get_name()
                .to_string();
            let profile = ConditionProfile::preset(&name)?;
            let split = a.split.clone().unwrap_or_else(|| format!("test-{name}"));
            let m = generate_dataset(&spec, &profile, a.count, a.seed, &split, &a.out, exec)?;
            manifest_summary(&a.out.join(format!("{split}.jsonl")), &m)?;
        }
        Preset::Patches => {
            let patches = generate_patches(&spec.with_size(128), a.count, 32, 32, a.seed, exec)?;
            let m = write_patches(&patches, &a.out, exec)?;
            manifest_summary(&a.out.join(format!("{}.jsonl", m.split)), &m)?;
        }
        Preset::Mosaic => {
            let spec = SceneSpec::default().with_size(a.mosaic_size);
            let (img, mut record) = generate_scene(&spec, &ConditionProfile::clear(), a.seed)?;
            record.image_id = "mosaic".into();
            std::fs::create_dir_all(&a.out)?;
            save_image(&img, &a.out.join("mosaic.png"))?;
            write_annotation(&record, &a.out.join("mosaic.xml"))?;
            outln!(
                "{}",
                json!({ "image": a.out.join("mosaic.png"), "annotation": a.out.join("mosaic.xml"), "objects": record.objects.len() })
            )?;
        }
    }
    Ok(())
}

fn tile(a: TileArgs) -> Result<()> {
    let mosaic = load_image(&a.image)?;
    let mosaic_id = a
        .image
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("mosaic")
        .to_string();
    let (tiles, index) = tile_image(&mosaic, &mosaic_id, a.tile_size, a.overlap)?;
    let records = match &a.annotation {
        Some(p) => tile_boxes(&read_annotation(p)?, &index, a.min_visible),
        None => index
            .tiles
            .iter()
            .map(|t| AnnotationRecord::new(t.id.clone(), a.tile_size as u32, a.tile_size as u32))
            .collect(),
    };
    for sub in ["images", "annotations"] {
        std::fs::create_dir_all(a.out.join(sub))?;
    }
    let mut manifest = DatasetManifest::new(mosaic_id.clone(), Default::default());
    for ((img, record), t) in tiles.iter().zip(&records).zip(&index.tiles) {
        let image = PathBuf::from(format!("images/{}.png", t.id));
        let annotation = PathBuf::from(format!("annotations/{}.xml", t.id));
        save_image(img, &a.out.join(&image))?;
        write_annotation(record, &a.out.join(&annotation))?;
        manifest.push(RecordRef {
            id: t.id.clone(),
            image,
            annotation,
        })?;
    }
    std::fs::write(a.out.join("index.txt"), index.render())?;
    let path = a.out.join("tiles.jsonl");
    manifest.save(&path)?;
    progress(
        "tiled",
        json!({ "tiles": index.tiles.len(), "index": a.out.join("index.txt") }),
    );
    manifest_summary(&path, &manifest)?;
    Ok(())
}

fn pretrain(a: PretrainArgs, exec: Execution) -> Result<()> {
    let ds = Dataset::open(&a.dataset)?;
    let patches: Vec<_> = ds
        .load_all()?
        .into_iter()
        .map(|(_, image, record)| seedling_core::synth::Patch {
            image,
            seedling: !record.objects.is_empty(),
        })
        .collect();
    let config = DetectorConfig::default();
    let (clf, report) = pretext_pretrain(
        &patches,
        &config,
        &PretextConfig {
            steps: a.steps,
            batch_size: a.batch,
            base_lr: a.lr,
            seed: a.seed,
            execution: exec,
            ..PretextConfig::default()
        },
    )?;
    let accuracy = clf.accuracy(&patches, exec)?;
    save_model(&clf.backbone_checkpoint(report.steps), &config, &a.out)?;
    outln!(
        "{}",
        json!({
            "checkpoint": a.out,
            "steps": report.steps,
            "final_loss": report.final_loss,
            "train_accuracy": accuracy,
            "positives": report.positives,
            "negatives": report.negatives,
        })
    )?;
    Ok(())
}

/// Number of training tiles used to calibrate a pretrained backbone's feature scale.
const CALIBRATION_TILES: usize = 8;

fn train_cmd(a: TrainArgs, exec: Execution) -> Result<()> {
    if a.batch == 0 {
        return Err(usage("--batch must be positive"));
    }
    let config = DetectorConfig {
        input_size: a.input_size,
        ..DetectorConfig::default()
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let train_set = Dataset::open(&a.dataset)?.load_all()?;
    if train_set.is_empty() {
        bail!("training manifest {} has no records", a.dataset.display());
    }
    let mut model = DetectorModel::new(config.clone(), &mut stream_rng(a.seed, 0))?;
    let anchors = Detector::new(model.clone())?.anchors().to_vec();
    let samples = prepare_samples(&train_set, &model, &anchors, exec)?;
    if let Some(init) = &a.init {
        let (ckpt, _) = read_checkpoint(init)?;
        let calibration: Vec<_> = samples
            .iter()
            .take(CALIBRATION_TILES)
            .map(|s| image_to_tensor(&s.image))
            .collect();
        let factor = model
            .load_backbone_calibrated(&ckpt, &calibration)
            .with_context(|| format!("loading backbone from {}", init.display()))?;
        progress("backbone_loaded", json!({ "from": init, "scale": factor }));
    }
    let val = match &a.val {
        Some(p) => Some(ValidationSet::from_tiles(
            &Dataset::open(p)?.load_all()?,
            a.input_size,
        )?),
        None => None,
    };
    let cfg = TrainConfig {
        steps: a.steps,
        batch_size: a.batch,
        base_lr: a.lr,
        lr_boundaries: a.lr_boundaries.clone(),
        eval_every: a.eval_every,
        eval_iou: a.iou,
        seed: a.seed,
        execution: exec,
        ..TrainConfig::default()
    };
    let out = train(model, &samples, val.as_ref(), &cfg, &mut |r| {
        if r.step % 10 == 0 || r.val_ap.is_some() || r.step == a.steps {
            progress("train_step", serde_json::to_value(r).unwrap_or_default());
        }
    })?;
    save_model(&out.checkpoint, &config, &a.out)?;
    outln!(
        "{}",
        json!({
            "checkpoint": a.out,
            "steps_run": out.steps_run,
            "checkpoint_step": out.checkpoint.step,
            "best_val_ap": out.best_val_ap,
        })
    )?;
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.iou) || !(0.0..=1.0).contains(&a.score_threshold) {
        return Err(usage("--iou and --score-threshold must lie in [0, 1]"));
    }
    let loaded = load_detector(
        &a.checkpoint,
        InferenceOverrides {
            score_threshold: None,
            max_detections: a.max_detections,
        },
    )?;
    let det = &loaded.detector;
    let ds = Dataset::open(&a.dataset)?;
    let tiles = ds.load_all()?;
    progress("eval_start", json!({ "images": tiles.len() }));
    let size = det.config().input_size;
    // stage times are per image, so this loop stays sequential
    let mut outputs = Vec::with_capacity(tiles.len());
    let timing = timing_harness(
        &tiles,
        |(_, img, _)| -> CoreResult<_> {
            let (resized, _, mapping) = resize_with_boxes(img, &[], size)?;
            Ok((image_to_tensor(&resized), mapping, img.width() as f64))
        },
        |(x, mapping, side)| -> CoreResult<_> {
            let dets = det.detect(x)?;
            Ok(dets
                .into_iter()
                .filter_map(|d| {
                    seedling_core::geometry::clip_to_bounds(&mapping.inverse(&d.bbox), *side, *side)
                        .map(|b| seedling_core::geometry::ScoredBox { bbox: b, ..d })
                })
                .collect::<Vec<_>>())
        },
        |(_, img, _), dets| {
            let _ = draw_detections(img, dets);
            outputs.push(dets.clone());
            Ok(())
        },
    )?;
    let gts: Vec<_> = tiles.iter().map(|(_, _, r)| r.boxes()).collect();
    let images: Vec<ImageEval<'_>> = outputs
        .iter()
        .zip(&gts)
        .map(|(d, g)| ImageEval {
            detections: d,
            ground_truth: g,
        })
        .collect();
    let (report, curve) = evaluate(&ds.manifest.split, &images, a.iou, a.score_threshold)?;
    let entry = ReportEntry {
        key: ds.manifest.split.clone(),
        report,
        curve,
        timing: Some(timing),
    };
    out!("{}", render_metrics(std::slice::from_ref(&entry)))?;
    if let Some(dir) = &a.out {
        let files = export_report(std::slice::from_ref(&entry), dir)?;
        progress("report_written", json!({ "files": files }));
    }
    Ok(())
}

fn infer(a: InferArgs) -> Result<()> {
    let loaded = load_detector(
        &a.checkpoint,
        InferenceOverrides {
            score_threshold: a.score_threshold,
            max_detections: Some(a.max_detections),
        },
    )?;
    let inputs: Vec<(String, PathBuf)> = match (&a.dataset, &a.image) {
        (Some(p), _) => {
            let ds = Dataset::open(p)?;
            ds.manifest
                .records
                .iter()
                .map(|r| (r.id.clone(), ds.image_path(r)))
                .collect()
        }
        (None, Some(img)) => {
            let id = img
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| usage(format!("cannot derive an id from {}", img.display())))?;
            vec![(id.to_string(), img.clone())]
        }
        (None, None) => return Err(usage("one of --dataset or --image is required")),
    };
    std::fs::create_dir_all(&a.out)?;
    for (id, path) in inputs {
        let img = load_image(&path)?;
        if img.width() != img.height() {
            bail!(
                "{}: tiles must be square, got {}x{}",
                path.display(),
                img.width(),
                img.height()
            );
        }
        let dets = loaded.detector.detect_tile(&img)?;
        let file = a.out.join(format!("{id}.csv"));
        std::fs::write(&file, render_detections(&dets))?;
        if a.visualize {
            save_image(
                &draw_detections(&img, &dets),
                &a.out.join(format!("{id}.png")),
            )?;
        }
        outln!(
            "{}",
            json!({ "id": id, "detections": dets.len(), "file": file })
        )?;
    }
    Ok(())
}

fn stitch(a: StitchArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.index)
        .with_context(|| format!("reading {}", a.index.display()))?;
    let index = TileIndex::parse(&text)?;
    let mut per_tile = Vec::new();
    for t in &index.tiles {
        let path = a.detections.join(format!("{}.csv", t.id));
        if !path.exists() {
            continue;
        }
        let dets = parse_detections(&std::fs::read_to_string(&path)?)
            .with_context(|| format!("reading {}", path.display()))?;
        per_tile.push((t.id.clone(), dets));
    }
    progress(
        "stitch",
        json!({ "tiles_with_detections": per_tile.len(), "tiles": index.tiles.len() }),
    );
    let merged = stitch_detections(&per_tile, &index, a.iou)?;
    let table = render_detections(&merged);
    match &a.out {
        Some(p) => {
            std::fs::write(p, table)?;
            outln!("{}", json!({ "detections": merged.len(), "file": p }))?;
        }
        None => out!("{table}")?,
    }
    Ok(())
}

fn store_dir(dataset: &Path, store: Option<&PathBuf>) -> PathBuf {
    store
        .cloned()
        .unwrap_or_else(|| dataset.parent().unwrap_or(Path::new(".")).join("review"))
}

fn serve_cmd(a: ServeArgs) -> Result<()> {
    let loaded = load_detector(&a.checkpoint, InferenceOverrides::default())?;
    let ds = Dataset::open(&a.dataset)?;
    let store = AnnotationStore::open(&store_dir(&a.dataset, a.store.as_ref()))?;
    let state = Arc::new(ServiceState::new(&ds, loaded.detector, loaded.hash, store)?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(a.bind)
            .await
            .with_context(|| format!("binding {}", a.bind))?;
        let addr = listener.local_addr()?;
        progress(
            "serving",
            json!({ "address": addr.to_string(), "tasks": state.tasks().len() }),
        );
        serve(listener, state).await?;
        Ok(())
    })
}

/// Writes the verified records of `store` as a dataset under `out`.
pub fn review_export(
    store: &AnnotationStore,
    dataset: &Dataset,
    out: &Path,
) -> Result<DatasetManifest> {
    for sub in ["images", "annotations"] {
        std::fs::create_dir_all(out.join(sub))?;
    }
    let mut manifest = DatasetManifest::new("verified", dataset.manifest.metadata.clone());
    for r in &dataset.manifest.records {
        let Some(task) = store
            .get(&r.id)
            .filter(|t| t.status == TaskStatus::Verified)
        else {
            continue;
        };
        let mut record = task.record.clone();
        record.provenance = Provenance::Verified;
        let src = dataset.image_path(r);
        let ext = src.extension().and_then(|e| e.to_str()).unwrap_or("png");
        let image = PathBuf::from(format!("images/{}.{ext}", r.id));
        let annotation = PathBuf::from(format!("annotations/{}.xml", r.id));
        std::fs::copy(&src, out.join(&image))
            .with_context(|| format!("copying {}", src.display()))?;
        write_annotation(&record, &out.join(&annotation))?;
        manifest.push(RecordRef {
            id: r.id.clone(),
            image,
            annotation,
        })?;
    }
    manifest.save(&out.join("verified.jsonl"))?;
    Ok(manifest)
}

fn review_export_cmd(a: ReviewExportArgs) -> Result<()> {
    let ds = Dataset::open(&a.dataset)?;
    let store = AnnotationStore::open(&store_dir(&a.dataset, a.store.as_ref()))?;
    let m = review_export(&store, &ds, &a.out)?;
    manifest_summary(&a.out.join("verified.jsonl"), &m)?;
    Ok(())
}
