//! Trains on a generated 273/60 split and prints held-out AP as it goes.
//!
//! cargo run --release -p seedling-core --example e2e -- [steps] [seed]

use std::time::Instant;

use seedling_core::detector::{
    prepare_samples, train, Detector, DetectorConfig, DetectorModel, TrainConfig, ValidationSet,
};
use seedling_core::rng::stream_rng;
use seedling_core::synth::{
    generate_tiles, ConditionProfile, SceneSpec, PAPER_SHAPE_TRAIN, PAPER_SHAPE_VAL,
};
use seedling_core::Execution;

fn main() -> seedling_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let steps: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);
    let exec = Execution::default();
    let start = Instant::now();
    let spec = SceneSpec::default();
    let clear = ConditionProfile::clear();
    let as_triples = |tiles: Vec<seedling_core::synth::SyntheticTile>| -> Vec<_> {
        tiles
            .into_iter()
            .map(|t| (t.id, t.image, t.record))
            .collect()
    };
    let train_tiles = as_triples(generate_tiles(
        &spec,
        &clear,
        PAPER_SHAPE_TRAIN,
        seed,
        "train",
        exec,
    )?);
    let val_tiles = as_triples(generate_tiles(
        &spec,
        &clear,
        PAPER_SHAPE_VAL,
        seed,
        "val",
        exec,
    )?);

    let config = DetectorConfig::default();
    let model = DetectorModel::new(config.clone(), &mut stream_rng(seed, 0))?;
    let anchors = Detector::new(model.clone())?.anchors().to_vec();
    let samples = prepare_samples(&train_tiles, &model, &anchors, exec)?;
    let val = ValidationSet::from_tiles(&val_tiles, config.input_size)?;
    println!("data ready: {:.1?}", start.elapsed());

    let cfg = TrainConfig {
        steps,
        seed,
        ..TrainConfig::default()
    };
    let out = train(model, &samples, Some(&val), &cfg, &mut |r| {
        if r.step % 50 == 0 || r.val_ap.is_some() {
            println!(
                "{:>5} {:>7.1?} loss {:.4} ap {:?}",
                r.step,
                start.elapsed(),
                r.loss,
                r.val_ap
            );
        }
    })?;
    println!(
        "best val AP {:.4} after {:.1?}",
        out.best_val_ap.unwrap_or(f64::NAN),
        start.elapsed()
    );
    Ok(())
}
