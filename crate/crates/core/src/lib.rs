//! Interactive segmentation workbench for gigapixel slide images.

pub mod assess;
pub mod class;
pub mod dial;
pub mod dmmn;
pub mod error;
pub mod inference;
pub mod mask;
pub mod patch;
pub mod raster;
pub mod seed;
pub mod synth;
pub mod workers;
pub mod wsi;

pub use class::{ClassCounts, ClassId, Palette, NUM_CLASSES, UNLABELED};
pub use error::{DialError, Result};
pub use mask::{class_pixel_counts, merge_masks, LabelMask};
pub use raster::{LabelRaster, RgbImage};
pub use wsi::{build_pyramid, WsiPyramid};
