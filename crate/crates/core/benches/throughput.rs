//! Sequential vs rayon throughput of the data-parallel stages.
//!
//! cargo bench -p seedling-core --bench throughput

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use seedling_core::detector::{
    prepare_samples, train, Detector, DetectorConfig, DetectorModel, TrainConfig, ValidationSet,
};
use seedling_core::rng::stream_rng;
use seedling_core::synth::{generate_tiles, ConditionProfile, SceneSpec};
use seedling_core::Execution;

const SIZE: usize = 256;
const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn config() -> DetectorConfig {
    DetectorConfig {
        input_size: SIZE,
        ..DetectorConfig::default()
    }
}

fn tiles(
    n: usize,
) -> Vec<(
    String,
    image::RgbImage,
    seedling_core::data::AnnotationRecord,
)> {
    generate_tiles(
        &SceneSpec::default().with_size(SIZE),
        &ConditionProfile::clear(),
        n,
        7,
        "bench",
        Execution::Parallel,
    )
    .unwrap()
    .into_iter()
    .map(|t| (t.id, t.image, t.record))
    .collect()
}

fn synth(c: &mut Criterion) {
    let mut g = c.benchmark_group("synth_8_tiles");
    let spec = SceneSpec::default().with_size(SIZE);
    let clear = ConditionProfile::clear();
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| generate_tiles(&spec, &clear, 8, 1, "b", exec).unwrap())
        });
    }
    g.finish();
}

fn train_step(c: &mut Criterion) {
    let model = DetectorModel::new(config(), &mut stream_rng(1, 0)).unwrap();
    let anchors = Detector::new(model.clone()).unwrap().anchors().to_vec();
    let samples = prepare_samples(&tiles(8), &model, &anchors, Execution::Parallel).unwrap();
    let mut g = c.benchmark_group("train_step_batch_8");
    g.sample_size(10);
    for (name, exec) in MODES {
        let cfg = TrainConfig {
            steps: 1,
            eval_every: 0,
            execution: exec,
            ..TrainConfig::default()
        };
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| train(model.clone(), &samples, None, &cfg, &mut |_| {}).unwrap())
        });
    }
    g.finish();
}

fn validation(c: &mut Criterion) {
    let model = DetectorModel::new(config(), &mut stream_rng(2, 0)).unwrap();
    let detector = Detector::new(model).unwrap();
    let val = ValidationSet::from_tiles(&tiles(8), SIZE).unwrap();
    let mut g = c.benchmark_group("validation_ap_8_tiles");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| val.average_precision(&detector, 0.5, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, synth, train_step, validation);
criterion_main!(benches);
