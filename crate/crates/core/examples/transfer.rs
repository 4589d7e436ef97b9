//! Paired warm/cold training runs: steps until validation AP reaches a target.
//!
//! cargo run --release -p seedling-core --example transfer -- [seed] [size] [max_steps] [eval_every]

use std::time::Instant;

use seedling_core::detector::{
    prepare_samples, pretext_pretrain, train, Detector, DetectorConfig, DetectorModel,
    PretextConfig, TrainConfig, ValidationSet,
};
use seedling_core::rng::stream_rng;
use seedling_core::synth::{generate_patches, generate_tiles, ConditionProfile, SceneSpec};
use seedling_core::Execution;

fn main() -> seedling_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let arg = |i: usize, d: u64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let seed = arg(1, 0);
    let size = arg(2, 256) as usize;
    let max_steps = arg(3, 400);
    let eval_every = arg(4, 10);
    let n_train = arg(5, 64) as usize;
    let pre_steps = arg(6, 300);
    let exec = Execution::default();
    let start = Instant::now();

    let spec = SceneSpec::default().with_size(size);
    let clear = ConditionProfile::clear();
    let triples = |split: &str, n: usize| -> seedling_core::Result<Vec<_>> {
        Ok(generate_tiles(&spec, &clear, n, seed, split, exec)?
            .into_iter()
            .map(|t| (t.id, t.image, t.record))
            .collect())
    };
    let train_tiles = triples("train", n_train)?;
    let val_tiles = triples("val", 16)?;
    let config = DetectorConfig {
        input_size: size,
        ..DetectorConfig::default()
    };
    let cold = DetectorModel::new(config.clone(), &mut stream_rng(seed, 0))?;
    let anchors = Detector::new(cold.clone())?.anchors().to_vec();
    let samples = prepare_samples(&train_tiles, &cold, &anchors, exec)?;
    let val = ValidationSet::from_tiles(&val_tiles, size)?;

    let patches = generate_patches(
        &SceneSpec::default().with_size(128),
        200,
        32,
        32,
        seed,
        exec,
    )?;
    let (clf, report) = pretext_pretrain(
        &patches,
        &config,
        &PretextConfig {
            steps: pre_steps,
            seed,
            ..PretextConfig::default()
        },
    )?;
    let held_out = generate_patches(
        &SceneSpec::default().with_size(128),
        100,
        32,
        32,
        seed + 1000,
        exec,
    )?;
    println!(
        "pretext loss {:.4} held-out acc {:.3} ({:.1?})",
        report.final_loss,
        clf.accuracy(&held_out, exec)?,
        start.elapsed()
    );
    let mut warm = cold.clone();
    let calibration: Vec<_> = samples[..8]
        .iter()
        .map(|s| seedling_core::data::image_to_tensor(&s.image))
        .collect();
    let factor =
        warm.load_backbone_calibrated(&clf.backbone_checkpoint(pre_steps), &calibration)?;
    println!("backbone scale {factor:.3}");

    let cfg = TrainConfig {
        steps: max_steps,
        lr_boundaries: vec![],
        eval_every,
        target_ap: Some(0.5),
        seed,
        ..TrainConfig::default()
    };
    for (name, model) in [("cold", cold), ("warm", warm)] {
        let out = train(model, &samples, Some(&val), &cfg, &mut |r| {
            if let Some(ap) = r.val_ap {
                print!("{}:{:.2} ", r.step, ap);
            }
        })?;
        println!();
        println!(
            "{name}: reached at {:?} ({:.1?})",
            out.target_reached_at,
            start.elapsed()
        );
    }
    Ok(())
}
