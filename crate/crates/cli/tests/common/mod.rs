#![allow(dead_code)]

use std::path::{Path, PathBuf};

use seedling_cli::io::{save_model, Dataset};
use seedling_core::detector::{DetectorConfig, DetectorModel};
use seedling_core::rng::stream_rng;
use seedling_core::synth::{generate_dataset, ConditionProfile, SceneSpec};
use seedling_core::Execution;

pub const TILE: usize = 128;

pub fn tiny_config() -> DetectorConfig {
    DetectorConfig {
        input_size: TILE,
        ..DetectorConfig::default()
    }
}

/// `n` clear tiles under `dir`, returning the manifest path.
pub fn tiny_dataset(dir: &Path, n: usize, seed: u64) -> PathBuf {
    generate_dataset(
        &SceneSpec::default().with_size(TILE),
        &ConditionProfile::clear(),
        n,
        seed,
        "val",
        dir,
        Execution::Sequential,
    )
    .unwrap();
    dir.join("val.jsonl")
}

pub fn open(path: &Path) -> Dataset {
    Dataset::open(path).unwrap()
}

/// An untrained model saved with its configuration.
pub fn tiny_checkpoint(dir: &Path, seed: u64) -> PathBuf {
    let model = DetectorModel::new(tiny_config(), &mut stream_rng(seed, 0)).unwrap();
    let path = dir.join("model.psck");
    save_model(&model.to_checkpoint(0), &model.config, &path).unwrap();
    path
}
