mod condition;
mod dataset;
mod noise;
mod scene;

pub use self::condition::{apply_condition, Clutter, ConditionProfile, WaterTone, CONDITION_NAMES};
pub use self::dataset::{
    condition_metadata, generate_dataset, generate_paper_shape, generate_patches, generate_tiles,
    scene_seed, write_patches, write_tiles, Patch, SyntheticTile, PAPER_SHAPE_TRAIN,
    PAPER_SHAPE_VAL,
};
pub use self::scene::{generate_scene, render_scene, SceneLayers, SceneSpec, Spacing};
