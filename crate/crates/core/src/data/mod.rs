mod annotation;
mod image;
mod manifest;
mod tiling;

pub use self::annotation::{
    annotation_line, parse_annotation_line, parse_annotation_xml, read_annotation,
    write_annotation, write_annotation_xml, AnnotatedObject, AnnotationRecord, PixelBox,
    Provenance, SEEDLING,
};
pub use self::image::{
    draw_detections, image_to_tensor, load_image, resize_with_boxes, save_image, ResizeMapping,
};
pub use self::manifest::{AcquisitionMetadata, DatasetManifest, RecordRef};
pub use self::tiling::{
    axis_origins, stitch_detections, tile_boxes, tile_image, TileIndex, TileOrigin,
    DEFAULT_MIN_VISIBLE_FRACTION, DEFAULT_OVERLAP, DEFAULT_SEAM_NMS_IOU, DEFAULT_TILE_SIZE,
};
