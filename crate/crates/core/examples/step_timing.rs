//! Times data preparation, one training step and one detection pass.
//!
//! cargo run --release -p seedling-core --example step_timing -- [tiles] [input_size]

use std::time::Instant;

use seedling_core::detector::{
    prepare_samples, train, Detector, DetectorConfig, DetectorModel, TrainConfig,
};
use seedling_core::rng::stream_rng;
use seedling_core::synth::{generate_tiles, ConditionProfile, SceneSpec};
use seedling_core::Execution;

fn main() -> seedling_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(16);
    let input: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(640);
    let steps: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(3);
    let batch: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(8);
    let exec = Execution::default();

    let t = Instant::now();
    let tiles = generate_tiles(
        &SceneSpec::default(),
        &ConditionProfile::clear(),
        n,
        1,
        "train",
        exec,
    )?;
    println!("synth {n} tiles: {:.2?}", t.elapsed());
    let objects: usize = tiles.iter().map(|t| t.record.objects.len()).sum();
    println!("objects per tile: {:.1}", objects as f64 / n as f64);

    let config = DetectorConfig {
        input_size: input,
        ..DetectorConfig::default()
    };
    let model = DetectorModel::new(config, &mut stream_rng(0, 0))?;
    let detector = Detector::new(model.clone())?;
    let triples: Vec<_> = tiles
        .into_iter()
        .map(|t| (t.id, t.image, t.record))
        .collect();
    let t = Instant::now();
    let samples = prepare_samples(&triples, &model, detector.anchors(), exec)?;
    println!("prepare: {:.2?}", t.elapsed());

    let cfg = TrainConfig {
        steps,
        batch_size: batch,
        eval_every: 0,
        ..TrainConfig::default()
    };
    let t = Instant::now();
    let out = train(model, &samples, None, &cfg, &mut |r| println!("{r:?}"))?;
    println!("{steps} steps batch {batch}: {:.2?}", t.elapsed());

    let det = Detector::new(out.model)?;
    let t = Instant::now();
    let d = det.detect_tile(&triples[0].1)?;
    println!("detect: {:.2?} ({} detections)", t.elapsed(), d.len());
    Ok(())
}
