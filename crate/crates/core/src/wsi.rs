//! Three-level slide pyramids (20×, 10×, 5×) and their tiled on-disk layout.
//!
//! Level `k` is a `2^k`×`2^k` box-filter mean of the 20× level with
//! round-half-up per channel. Both lower levels are computed directly from
//! the 20× pixels so that regeneration is bit-exact.
//!
//! On disk a slide is a directory holding `manifest.json` and
//! `TILE_SIZE`-square PNG tiles named `L{level}_{row}_{col}.png`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DialError, Result};
use crate::raster::RgbImage;

pub const NUM_LEVELS: usize = 3;
pub const MIN_SLIDE_DIM: usize = 1024;
pub const TILE_SIZE: usize = 256;

/// Nominal magnification of each pyramid level.
pub const MAGNIFICATIONS: [u32; NUM_LEVELS] = [20, 10, 5];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WsiPyramid {
    pub slide_id: String,
    pub case_id: String,
    levels: [RgbImage; NUM_LEVELS],
}

impl WsiPyramid {
    pub fn level(&self, k: usize) -> &RgbImage {
        &self.levels[k]
    }

    pub fn levels(&self) -> &[RgbImage; NUM_LEVELS] {
        &self.levels
    }

    pub fn width(&self) -> usize {
        self.levels[0].width()
    }

    pub fn height(&self) -> usize {
        self.levels[0].height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.levels[0].dims()
    }
}

/// `ceil(dim / 2^k)`.
pub fn level_dim(dim: usize, k: usize) -> usize {
    dim.div_ceil(1 << k)
}

/// Box-filter mean over `factor`×`factor` blocks, clipped at the right and
/// bottom edges, rounded half-up.
pub fn downsample_box(src: &RgbImage, factor: usize) -> RgbImage {
    assert!(factor >= 1);
    let (w, h) = src.dims();
    let ow = w.div_ceil(factor);
    let oh = h.div_ceil(factor);
    let mut out = RgbImage::new(ow, oh);
    let raw = src.as_raw();
    let mut sums = vec![0u32; ow * 3];
    for oy in 0..oh {
        sums.iter_mut().for_each(|s| *s = 0);
        let y_end = ((oy + 1) * factor).min(h);
        let rows = (y_end - oy * factor) as u32;
        for y in oy * factor..y_end {
            let row = &raw[y * w * 3..(y + 1) * w * 3];
            for x in 0..w {
                let o = (x / factor) * 3;
                sums[o] += row[x * 3] as u32;
                sums[o + 1] += row[x * 3 + 1] as u32;
                sums[o + 2] += row[x * 3 + 2] as u32;
            }
        }
        let dst = out.as_raw_mut();
        for ox in 0..ow {
            let cols = (((ox + 1) * factor).min(w) - ox * factor) as u32;
            let n = rows * cols;
            for c in 0..3 {
                // floor(sum / n + 1/2)
                let s = sums[ox * 3 + c];
                dst[(oy * ow + ox) * 3 + c] = ((2 * s + n) / (2 * n)) as u8;
            }
        }
    }
    out
}

pub fn build_pyramid(
    slide_id: impl Into<String>,
    case_id: impl Into<String>,
    level20x: RgbImage,
) -> Result<WsiPyramid> {
    let (w, h) = level20x.dims();
    if w < MIN_SLIDE_DIM || h < MIN_SLIDE_DIM {
        return Err(DialError::DegenerateDimensions {
            width: w,
            height: h,
            reason: format!("both sides must be at least {MIN_SLIDE_DIM}"),
        });
    }
    let level10 = downsample_box(&level20x, 2);
    let level5 = downsample_box(&level20x, 4);
    Ok(WsiPyramid {
        slide_id: slide_id.into(),
        case_id: case_id.into(),
        levels: [level20x, level10, level5],
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelInfo {
    pub level: usize,
    pub magnification: u32,
    pub width: usize,
    pub height: usize,
    pub tile_rows: usize,
    pub tile_cols: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlideManifest {
    pub slide_id: String,
    pub case_id: String,
    pub width: usize,
    pub height: usize,
    pub tile_size: usize,
    pub seed: Option<u64>,
    pub levels: Vec<LevelInfo>,
}

impl SlideManifest {
    pub fn for_pyramid(slide: &WsiPyramid, seed: Option<u64>) -> Self {
        let levels = (0..NUM_LEVELS)
            .map(|k| {
                let (w, h) = slide.level(k).dims();
                LevelInfo {
                    level: k,
                    magnification: MAGNIFICATIONS[k],
                    width: w,
                    height: h,
                    tile_rows: h.div_ceil(TILE_SIZE),
                    tile_cols: w.div_ceil(TILE_SIZE),
                }
            })
            .collect();
        SlideManifest {
            slide_id: slide.slide_id.clone(),
            case_id: slide.case_id.clone(),
            width: slide.width(),
            height: slide.height(),
            tile_size: TILE_SIZE,
            seed,
            levels,
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| DialError::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn tile_file_name(level: usize, row: usize, col: usize) -> String {
    format!("L{level}_{row}_{col}.png")
}

/// Extracts one tile; edge tiles are cut to the level bounds.
pub fn tile(slide: &WsiPyramid, level: usize, row: usize, col: usize) -> Option<RgbImage> {
    if level >= NUM_LEVELS {
        return None;
    }
    let img = slide.level(level);
    let (x0, y0) = (col * TILE_SIZE, row * TILE_SIZE);
    if x0 >= img.width() || y0 >= img.height() {
        return None;
    }
    let w = TILE_SIZE.min(img.width() - x0);
    let h = TILE_SIZE.min(img.height() - y0);
    Some(img.crop_padded(x0 as i64, y0 as i64, w, h))
}

pub fn save_slide(slide: &WsiPyramid, dir: &Path, seed: Option<u64>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| DialError::io(dir, e))?;
    let manifest = SlideManifest::for_pyramid(slide, seed);
    for info in &manifest.levels {
        for row in 0..info.tile_rows {
            for col in 0..info.tile_cols {
                let t = tile(slide, info.level, row, col).expect("tile inside level bounds");
                let path = dir.join(tile_file_name(info.level, row, col));
                fs::write(&path, t.encode_png()?).map_err(|e| DialError::io(&path, e))?;
            }
        }
    }
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| DialError::io(&path, e))?;
    Ok(())
}

pub fn read_tile(dir: &Path, level: usize, row: usize, col: usize) -> Result<RgbImage> {
    let path = dir.join(tile_file_name(level, row, col));
    let bytes = fs::read(&path).map_err(|e| DialError::io(&path, e))?;
    RgbImage::decode_png(&bytes)
}

/// Loads the 20× tiles and rebuilds the lower levels from them; the first
/// stored tile of each lower level is checked against the regenerated one.
pub fn load_slide(dir: &Path) -> Result<WsiPyramid> {
    let manifest = SlideManifest::load(dir)?;
    let l0 = manifest
        .levels
        .first()
        .ok_or_else(|| DialError::Format("manifest lists no levels".into()))?;
    let mut level20 = RgbImage::new(manifest.width, manifest.height);
    for row in 0..l0.tile_rows {
        for col in 0..l0.tile_cols {
            let t = read_tile(dir, 0, row, col)?;
            level20.blit(&t, col * manifest.tile_size, row * manifest.tile_size);
        }
    }
    let slide = build_pyramid(manifest.slide_id.clone(), manifest.case_id.clone(), level20)?;
    for info in &manifest.levels[1..] {
        if info.level >= NUM_LEVELS || slide.level(info.level).dims() != (info.width, info.height) {
            return Err(DialError::Format(format!(
                "level {} dims in manifest disagree with the halving rule",
                info.level
            )));
        }
        let stored = read_tile(dir, info.level, 0, 0)?;
        if Some(&stored) != tile(&slide, info.level, 0, 0).as_ref() {
            return Err(DialError::Format(format!(
                "stored level {} tiles do not match the 20x level",
                info.level
            )));
        }
    }
    Ok(slide)
}
