//! Whole-slide segmentation by non-overlapping `P × P` windows.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::class::{ClassCounts, Palette, UNLABELED};
use crate::dmmn::{DmmnModel, PatchInput, Tensor};
use crate::error::{DialError, Result};
use crate::mask::{LabelMask, PREDICTION_ROUND};
use crate::patch::{crop_multiscale, grid_origins};
use crate::raster::{LabelRaster, RgbImage};
use crate::seed::sha256_hex;
use crate::workers::Workers;
use crate::wsi::{level_dim, WsiPyramid};

/// Per-pixel predicted classes at 20×, with cached class counts.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationMap {
    pub slide_id: String,
    pub model_hash: String,
    data: LabelRaster,
    counts: ClassCounts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SegmapMeta {
    slide_id: String,
    model_hash: String,
    counts: ClassCounts,
}

fn meta_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".json");
    path.with_file_name(name)
}

impl SegmentationMap {
    pub fn new(
        slide_id: impl Into<String>,
        model_hash: impl Into<String>,
        data: LabelRaster,
    ) -> Result<Self> {
        if data.as_raw().contains(&UNLABELED) {
            return Err(DialError::Format(
                "segmentation maps cannot hold unlabeled pixels".into(),
            ));
        }
        let counts = data.class_counts();
        Ok(SegmentationMap {
            slide_id: slide_id.into(),
            model_hash: model_hash.into(),
            data,
            counts,
        })
    }

    pub fn data(&self) -> &LabelRaster {
        &self.data
    }

    pub fn counts(&self) -> &ClassCounts {
        &self.counts
    }

    pub fn dims(&self) -> (usize, usize) {
        self.data.dims()
    }

    pub fn to_mask(&self) -> LabelMask {
        LabelMask::from_raster(self.slide_id.clone(), PREDICTION_ROUND, &self.data)
    }

    /// SHA-256 of the run-length encoding.
    pub fn hash(&self) -> String {
        sha256_hex(&self.to_mask().encode())
    }

    /// Writes the map as a prediction mask plus a `<file>.json` sidecar with
    /// the producing model's hash.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_mask().save(path)?;
        let meta = SegmapMeta {
            slide_id: self.slide_id.clone(),
            model_hash: self.model_hash.clone(),
            counts: self.counts,
        };
        let mp = meta_path(path);
        fs::write(&mp, serde_json::to_vec_pretty(&meta)?).map_err(|e| DialError::io(&mp, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mp = meta_path(path);
        let meta: SegmapMeta =
            serde_json::from_slice(&fs::read(&mp).map_err(|e| DialError::io(&mp, e))?)?;
        let mask = LabelMask::load(path, meta.slide_id.clone())?;
        if mask.round != PREDICTION_ROUND {
            return Err(DialError::Format(format!(
                "{} is an annotation mask (round {}), not a prediction",
                path.display(),
                mask.round
            )));
        }
        let map = SegmentationMap::new(meta.slide_id, meta.model_hash, mask.to_raster())?;
        if map.counts != meta.counts {
            return Err(DialError::Format(
                "sidecar counts disagree with the mask".into(),
            ));
        }
        Ok(map)
    }
}

/// Top-left corners of the windows covering a `width × height` slide,
/// row-major.
pub fn window_grid(width: usize, height: usize, patch_size: usize) -> Vec<(usize, usize)> {
    grid_origins(height, patch_size)
        .flat_map(|y| grid_origins(width, patch_size).map(move |x| (x, y)))
        .collect()
}

/// Class map of one window; pixels beyond the slide come from zero padding.
pub fn segment_window(
    model: &DmmnModel,
    slide: &WsiPyramid,
    x0: usize,
    y0: usize,
) -> Result<LabelRaster> {
    let p = model.config().patch_size;
    let crop = crop_multiscale(slide, x0 as i64, y0 as i64, p);
    let input = PatchInput::<f32> {
        x20: Tensor::from_rgb(&crop.img20),
        x10: Tensor::from_rgb(&crop.img10),
        x5: Tensor::from_rgb(&crop.img5),
    };
    model.predict(&input)
}

pub fn segment_slide(
    model: &DmmnModel,
    model_hash: &str,
    slide: &WsiPyramid,
    workers: usize,
) -> Result<SegmentationMap> {
    let pool = Workers::new(workers)?;
    let p = model.config().patch_size;
    let (w, h) = slide.dims();
    let mut out = LabelRaster::new(w, h, 0);
    let xs: Vec<usize> = grid_origins(w, p).collect();
    // One row of windows at a time keeps memory at O(width · P).
    for y0 in grid_origins(h, p) {
        let row = pool.map(xs.len(), |i| segment_window(model, slide, xs[i], y0));
        for (window, &x0) in row.into_iter().zip(&xs) {
            let window = window?;
            let (cw, ch) = ((w - x0).min(p), (h - y0).min(p));
            for dy in 0..ch {
                let src = &window.row(dy)[..cw];
                let start = (y0 + dy) * w + x0;
                out.as_raw_mut()[start..start + cw].copy_from_slice(src);
            }
        }
    }
    SegmentationMap::new(slide.slide_id.clone(), model_hash, out)
}

/// `round((1-α)·pixel + α·color)` per channel.
pub fn blend(pixel: [u8; 3], color: [u8; 3], alpha: f64) -> [u8; 3] {
    std::array::from_fn(|c| {
        ((1.0 - alpha) * pixel[c] as f64 + alpha * color[c] as f64)
            .round()
            .clamp(0.0, 255.0) as u8
    })
}

/// Blends a 20× label raster over `img`, a region of pyramid level `level`
/// whose top-left pixel sits at `(x0, y0)` of that level. Each level pixel
/// takes the label of the 20× pixel at its center; unlabeled pixels show
/// the image unchanged.
pub fn overlay_image(
    img: &RgbImage,
    labels: &LabelRaster,
    palette: &Palette,
    alpha: f64,
    level: usize,
    x0: usize,
    y0: usize,
) -> Result<RgbImage> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(DialError::InvalidConfig(format!(
            "alpha {alpha} outside [0, 1]"
        )));
    }
    let (w, h) = img.dims();
    let f = 1usize << level;
    let (sw, sh) = labels.dims();
    let mut out = RgbImage::new(w, h);
    for y in 0..h {
        let sy = ((y0 + y) * f + f / 2).min(sh - 1);
        for x in 0..w {
            let sx = ((x0 + x) * f + f / 2).min(sw - 1);
            let px = img.pixel(x, y);
            let v = labels.get(sx, sy);
            let rgb = if v == UNLABELED {
                px
            } else {
                blend(px, palette.color(v)?, alpha)
            };
            out.put_pixel(x, y, rgb);
        }
    }
    Ok(out)
}

/// [`overlay_image`] over a rectangle of one level of `slide`.
#[allow(clippy::too_many_arguments)]
pub fn overlay_rect(
    slide: &WsiPyramid,
    labels: &LabelRaster,
    palette: &Palette,
    alpha: f64,
    level: usize,
    x0: usize,
    y0: usize,
    width: usize,
    height: usize,
) -> Result<RgbImage> {
    if labels.dims() != slide.dims() {
        return Err(DialError::DimensionMismatch {
            expected: slide.dims(),
            actual: labels.dims(),
        });
    }
    let img = slide.level(level);
    let (lw, lh) = img.dims();
    let (w, h) = (
        width.min(lw.saturating_sub(x0)),
        height.min(lh.saturating_sub(y0)),
    );
    let region = img.crop_padded(x0 as i64, y0 as i64, w, h);
    overlay_image(&region, labels, palette, alpha, level, x0, y0)
}

/// Full-level overlay.
pub fn overlay(
    slide: &WsiPyramid,
    labels: &LabelRaster,
    palette: &Palette,
    alpha: f64,
    level: usize,
) -> Result<RgbImage> {
    let (w, h) = slide.dims();
    overlay_rect(
        slide,
        labels,
        palette,
        alpha,
        level,
        0,
        0,
        level_dim(w, level),
        level_dim(h, level),
    )
}
