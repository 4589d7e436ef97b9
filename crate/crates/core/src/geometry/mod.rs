//! Box arithmetic, anchors, delta coding and suppression.
//!
//! Coordinates are continuous pixels with the origin at the top-left corner.
//! A box is stored as its corner pair and `area = (x_max - x_min) * (y_max - y_min)`,
//! so a box covering pixel columns `0..10` is `x_min = 0, x_max = 10`.

mod anchors;
mod bbox;
mod delta;
mod nms;

pub use anchors::{generate_anchors, AnchorGridSpec};
pub use bbox::{clip_to_bounds, iou, BBox, ScoredBox};
pub use delta::{decode, encode, BoxDelta, Decoded, MAX_LOG_SCALE};
pub use nms::{nms, nms_indices};
