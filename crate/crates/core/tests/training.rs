mod common;

use image::{Rgb, RgbImage};
use seedling_core::detector::{
    prepare_samples, pretext_pretrain, train, Detector, DetectorConfig, DetectorModel,
    PatchClassifier, PreparedSample, PretextConfig, TrainConfig,
};
use seedling_core::nn::{load_checkpoint, save_checkpoint};
use seedling_core::rng::stream_rng;
use seedling_core::synth::{generate_patches, generate_tiles, ConditionProfile, SceneSpec};
use seedling_core::{Error, Execution};

fn tiny_config() -> DetectorConfig {
    DetectorConfig {
        input_size: 128,
        ..DetectorConfig::default()
    }
}

fn tiny_samples(n: usize, seed: u64, model: &DetectorModel) -> Vec<PreparedSample> {
    let spec = SceneSpec::default().with_size(128);
    let tiles: Vec<_> = generate_tiles(
        &spec,
        &ConditionProfile::clear(),
        n,
        seed,
        "train",
        Execution::Parallel,
    )
    .unwrap()
    .into_iter()
    .map(|t| (t.id, t.image, t.record))
    .collect();
    let anchors = Detector::new(model.clone()).unwrap().anchors().to_vec();
    prepare_samples(&tiles, model, &anchors, Execution::Parallel).unwrap()
}

fn quick(steps: u64, seed: u64, execution: Execution) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: 2,
        lr_boundaries: vec![],
        eval_every: 0,
        seed,
        execution,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_steps_returns_the_initialisation() {
    let model = DetectorModel::new(tiny_config(), &mut stream_rng(1, 0)).unwrap();
    let samples = tiny_samples(2, 1, &model);
    let out = train(
        model.clone(),
        &samples,
        None,
        &quick(0, 1, Execution::Parallel),
        &mut |_| {},
    )
    .unwrap();
    assert_eq!(out.checkpoint, model.to_checkpoint(0));
    assert_eq!(out.model, model);
    assert!(out.log.is_empty());
}

#[test]
fn loss_decreases_on_average_over_five_seeds() {
    let (mut first, mut last) = (0.0, 0.0);
    for seed in 0..5 {
        let model = DetectorModel::new(tiny_config(), &mut stream_rng(seed, 0)).unwrap();
        let samples = tiny_samples(4, seed, &model);
        let mut cfg = quick(30, seed, Execution::Parallel);
        cfg.batch_size = 4;
        let out = train(model, &samples, None, &cfg, &mut |_| {}).unwrap();
        first += out.log[0].loss;
        // full-batch, so consecutive steps see identical data
        last += out.log.iter().rev().take(5).map(|r| r.loss).sum::<f64>() / 5.0;
    }
    assert!(
        last < first,
        "mean first {} vs last {}",
        first / 5.0,
        last / 5.0
    );
}

#[test]
fn parallel_and_sequential_training_are_bit_identical() {
    let model = DetectorModel::new(tiny_config(), &mut stream_rng(2, 0)).unwrap();
    let samples = tiny_samples(3, 2, &model);
    let a = train(
        model.clone(),
        &samples,
        None,
        &quick(3, 2, Execution::Sequential),
        &mut |_| {},
    )
    .unwrap();
    let b = train(
        model,
        &samples,
        None,
        &quick(3, 2, Execution::Parallel),
        &mut |_| {},
    )
    .unwrap();
    assert_eq!(a.checkpoint, b.checkpoint);
    assert_eq!(a.log, b.log);
}

#[test]
fn exploding_learning_rate_aborts_with_batch_ids() {
    let model = DetectorModel::new(tiny_config(), &mut stream_rng(3, 0)).unwrap();
    let samples = tiny_samples(2, 3, &model);
    let mut cfg = quick(20, 3, Execution::Parallel);
    cfg.base_lr = 1e30;
    cfg.grad_clip = None;
    match train(model, &samples, None, &cfg, &mut |_| {}) {
        Err(Error::TrainingFault { step, reason }) => {
            assert!(step > 0);
            assert!(reason.contains("train_"), "{reason}");
        }
        other => panic!(
            "expected a training fault, got {:?}",
            other.map(|o| o.steps_run)
        ),
    }
}

#[test]
fn checkpoint_file_restores_the_same_detector() {
    let model = DetectorModel::new(tiny_config(), &mut stream_rng(4, 0)).unwrap();
    let samples = tiny_samples(2, 4, &model);
    let out = train(
        model,
        &samples,
        None,
        &quick(2, 4, Execution::Parallel),
        &mut |_| {},
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.psck");
    save_checkpoint(&out.checkpoint, &path).unwrap();
    let restored =
        DetectorModel::from_checkpoint(tiny_config(), &load_checkpoint(&path).unwrap()).unwrap();
    assert_eq!(restored, out.model);
    let tile = &samples[0].image;
    let a = Detector::new(out.model).unwrap().detect_tile(tile).unwrap();
    let b = Detector::new(restored).unwrap().detect_tile(tile).unwrap();
    assert_eq!(a, b);
}

#[test]
fn detection_count_respects_the_cap() {
    let mut cfg = tiny_config();
    cfg.score_threshold = 0.0;
    cfg.detection_nms_iou = 1.0;
    let model = DetectorModel::new(cfg.clone(), &mut stream_rng(5, 0)).unwrap();
    let tile = generate_tiles(
        &SceneSpec::default().with_size(128),
        &ConditionProfile::clear(),
        1,
        5,
        "t",
        Execution::Parallel,
    )
    .unwrap()
    .remove(0);
    for cap in [200, 17, 1] {
        let mut m = model.clone();
        m.config.max_detections = cap;
        let d = Detector::new(m).unwrap().detect_tile(&tile.image).unwrap();
        assert!(d.len() <= cap);
        if cap < 200 {
            assert_eq!(d.len(), cap);
        }
        for w in d.windows(2) {
            assert!(w[0].score >= w[1].score);
        }
    }
}

#[test]
fn unit_score_threshold_yields_nothing() {
    let mut cfg = tiny_config();
    cfg.score_threshold = 1.0;
    let model = DetectorModel::new(cfg, &mut stream_rng(6, 0)).unwrap();
    let tile = RgbImage::from_pixel(128, 128, Rgb([40, 90, 60]));
    assert!(Detector::new(model)
        .unwrap()
        .detect_tile(&tile)
        .unwrap()
        .is_empty());
}

#[test]
fn wrong_input_size_is_rejected() {
    let model = DetectorModel::new(tiny_config(), &mut stream_rng(7, 0)).unwrap();
    let det = Detector::new(model).unwrap();
    let bad = seedling_core::nn::Tensor::zeros(&[1, 3, 64, 64]);
    assert!(matches!(det.detect(&bad), Err(Error::InvalidInput(_))));
}

#[test]
fn detections_stay_inside_the_tile() {
    let mut cfg = tiny_config();
    cfg.score_threshold = 0.0;
    let model = DetectorModel::new(cfg, &mut stream_rng(8, 0)).unwrap();
    let tile = RgbImage::from_pixel(100, 100, Rgb([10, 200, 30]));
    for d in Detector::new(model).unwrap().detect_tile(&tile).unwrap() {
        assert!(d.bbox.x_min >= 0.0 && d.bbox.y_min >= 0.0);
        assert!(d.bbox.x_max <= 100.0 && d.bbox.y_max <= 100.0);
    }
}

#[test]
fn pretext_backbone_loads_into_detector() {
    let cfg = tiny_config();
    let patches = generate_patches(
        &SceneSpec::default().with_size(128),
        16,
        48,
        32,
        9,
        Execution::Parallel,
    )
    .unwrap();
    let pcfg = PretextConfig {
        steps: 40,
        batch_size: 8,
        seed: 9,
        ..PretextConfig::default()
    };
    let (clf, report) = pretext_pretrain(&patches, &cfg, &pcfg).unwrap();
    assert_eq!(report.positives, report.negatives);
    assert!(report.final_loss.is_finite());
    let backbone = clf.backbone_checkpoint(40);
    let mut model = DetectorModel::new(cfg.clone(), &mut stream_rng(9, 1)).unwrap();
    model.load_backbone(&backbone).unwrap();
    for (layer, trained) in model.backbone.iter().zip(&clf.backbone) {
        assert_eq!(layer.params, trained.params);
    }
    // a classifier built for a different backbone width does not fit
    let other = PatchClassifier::new(
        &DetectorConfig {
            backbone_channels: [8, 8, 8, 8],
            ..cfg
        },
        &mut stream_rng(0, 0),
    );
    assert!(model.load_backbone(&other.backbone_checkpoint(0)).is_err());
}

#[test]
fn pretext_rejects_an_empty_set() {
    assert!(pretext_pretrain(&[], &tiny_config(), &PretextConfig::default()).is_err());
}
