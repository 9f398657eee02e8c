//! Training-set construction from partial annotations.
//!
//! Grid patches are kept when strictly more than 1% of their target pixels
//! are labeled. Rare classes are topped up with elastically deformed
//! duplicates, cases are split into training and validation sides, and loss
//! weights are derived from the per-class pixel counts.

mod balance;
mod deform;
mod split;
mod store;
mod weights;

pub use balance::{balance_by_deformation, is_rare, rare_classes, BalanceParams, RARE_FRACTION};
pub use deform::{elastic_deform, DeformParams};
pub use split::{assign_validation_cases, split_by_case, DatasetSplit, SPLIT_UPPER_FACTOR};
pub use store::{PatchStore, StoreIndex, PATCH_STORE_MAGIC};
pub use weights::{compute_weights, LossWeights};

use crate::class::{ClassCounts, NUM_CLASSES, UNLABELED};
use crate::error::{DialError, Result};
use crate::mask::LabelMask;
use crate::raster::{LabelRaster, RgbImage};
use crate::seed::SeedBuilder;
use crate::wsi::WsiPyramid;

/// Co-centered 20×/10×/5× crops plus the 20×-aligned target.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchRecord {
    pub slide_id: String,
    pub case_id: String,
    /// Patch center in 20× pixel coordinates.
    pub center: (i64, i64),
    pub img20: RgbImage,
    pub img10: RgbImage,
    pub img5: RgbImage,
    pub target: LabelRaster,
    pub round: i32,
    pub deformed: bool,
}

impl PatchRecord {
    pub fn size(&self) -> usize {
        self.img20.width()
    }

    pub fn class_counts(&self) -> ClassCounts {
        self.target.class_counts()
    }

    /// Most frequent labeled class (lowest index on ties), if any.
    pub fn modal_class(&self) -> Option<usize> {
        let counts = self.class_counts();
        let (best, &n) = counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))?;
        (n > 0).then_some(best)
    }

    /// Base seed for everything random about this patch.
    pub fn seed(&self, global_seed: u64) -> SeedBuilder {
        SeedBuilder::new("patch")
            .u64(global_seed)
            .str(&self.slide_id)
            .i64(self.center.0)
            .i64(self.center.1)
            .i64(self.round as i64)
    }
}

/// The three magnification crops of one window, in 20×/10×/5× order.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiScaleCrop {
    pub img20: RgbImage,
    pub img10: RgbImage,
    pub img5: RgbImage,
}

/// Crops `size`×`size` windows at every level, all centered on the same
/// physical point `(x0 + size/2, y0 + size/2)` of the 20× level. Whatever
/// overruns a level's bounds is zero.
pub fn crop_multiscale(slide: &WsiPyramid, x0: i64, y0: i64, size: usize) -> MultiScaleCrop {
    let half = size as i64 / 2;
    let (cx, cy) = (x0 + half, y0 + half);
    let crop = |k: usize| {
        let ox = cx.div_euclid(1 << k) - half;
        let oy = cy.div_euclid(1 << k) - half;
        slide.level(k).crop_padded(ox, oy, size, size)
    };
    MultiScaleCrop {
        img20: crop(0),
        img10: crop(1),
        img5: crop(2),
    }
}

/// Strictly more than 1% of `total` pixels.
pub fn passes_label_threshold(labeled: usize, total: usize) -> bool {
    // labeled / total > 1/100, in integers.
    labeled * 100 > total
}

/// Grid origins along one axis: 0, stride, 2·stride, … while inside `dim`.
pub fn grid_origins(dim: usize, stride: usize) -> impl Iterator<Item = usize> {
    (0..dim).step_by(stride.max(1))
}

pub fn extract_patches(
    slide: &WsiPyramid,
    mask: &LabelMask,
    patch_size: usize,
    stride: usize,
) -> Result<Vec<PatchRecord>> {
    if mask.dims() != slide.dims() {
        return Err(DialError::DimensionMismatch {
            expected: slide.dims(),
            actual: mask.dims(),
        });
    }
    if patch_size == 0 || stride == 0 {
        return Err(DialError::InvalidConfig(
            "patch size and stride must be positive".into(),
        ));
    }
    let labels = mask.to_raster();
    let (w, h) = slide.dims();
    let mut out = Vec::new();
    for y0 in grid_origins(h, stride) {
        for x0 in grid_origins(w, stride) {
            let target =
                labels.crop_padded(x0 as i64, y0 as i64, patch_size, patch_size, UNLABELED);
            if !passes_label_threshold(target.labeled_count(), patch_size * patch_size) {
                continue;
            }
            let crop = crop_multiscale(slide, x0 as i64, y0 as i64, patch_size);
            let half = patch_size as i64 / 2;
            out.push(PatchRecord {
                slide_id: slide.slide_id.clone(),
                case_id: slide.case_id.clone(),
                center: (x0 as i64 + half, y0 as i64 + half),
                img20: crop.img20,
                img10: crop.img10,
                img5: crop.img5,
                target,
                round: mask.round,
                deformed: false,
            });
        }
    }
    Ok(out)
}

/// Sum of target class counts over patches.
pub fn patch_class_counts<'a>(patches: impl IntoIterator<Item = &'a PatchRecord>) -> ClassCounts {
    let mut counts = [0u64; NUM_CLASSES];
    for p in patches {
        for (c, n) in counts.iter_mut().zip(p.class_counts()) {
            *c += n;
        }
    }
    counts
}
