//! Two-stage seedling detection for aerial paddy imagery.
//!
//! - [`geometry`]: boxes, anchors, box deltas, NMS
//! - [`nn`]: tensors, layers with analytic backward passes, momentum SGD, checkpoints
//! - [`detector`]: backbone, region proposals, RoI pooling, box head, training
//! - [`data`]: annotation XML, manifests, tiling and stitching
//! - [`synth`]: procedural paddy tiles under four field conditions
//! - [`eval`]: matching, AP, precision/recall/F1, timing and reports

// `!(x > 0.0)` style checks are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod detector;
pub mod error;
pub mod eval;
pub mod exec;
pub mod geometry;
pub mod nn;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
pub use exec::Execution;

// Training allocates and frees tens of megabytes of activations per image; an
// allocator that keeps freed pages avoids refaulting them on every pass.
#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;
