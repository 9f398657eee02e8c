//! Run-length encoded label masks.
//!
//! File layout (little-endian):
//!
//! ```text
//! b"DIALMASK1" | width: u32 | height: u32 | round: i32 | rows...
//! row := (class_id: u8, length: u32)+   -- run lengths of a row sum to width
//! ```
//!
//! `round` is the annotation round (0 = initial, k = k-th correction);
//! [`PREDICTION_ROUND`] marks a model prediction stored in the same format.

use std::fs;
use std::path::Path;

use crate::class::{check_mask_value, ClassCounts, NUM_CLASSES, UNLABELED};
use crate::error::{DialError, Result};
use crate::raster::LabelRaster;

pub const MASK_MAGIC: &[u8; 9] = b"DIALMASK1";
pub const PREDICTION_ROUND: i32 = -1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Run {
    pub value: u8,
    pub len: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMask {
    pub slide_id: String,
    pub round: i32,
    width: usize,
    height: usize,
    rows: Vec<Vec<Run>>,
}

fn encode_row(row: &[u8]) -> Vec<Run> {
    let mut runs: Vec<Run> = Vec::new();
    for &v in row {
        match runs.last_mut() {
            Some(r) if r.value == v => r.len += 1,
            _ => runs.push(Run { value: v, len: 1 }),
        }
    }
    runs
}

impl LabelMask {
    pub fn unlabeled(slide_id: impl Into<String>, round: i32, width: usize, height: usize) -> Self {
        let row = vec![Run {
            value: UNLABELED,
            len: width as u32,
        }];
        LabelMask {
            slide_id: slide_id.into(),
            round,
            width,
            height,
            rows: if width == 0 {
                vec![Vec::new(); height]
            } else {
                vec![row; height]
            },
        }
    }

    pub fn from_raster(slide_id: impl Into<String>, round: i32, raster: &LabelRaster) -> Self {
        let rows = (0..raster.height())
            .map(|y| encode_row(raster.row(y)))
            .collect();
        LabelMask {
            slide_id: slide_id.into(),
            round,
            width: raster.width(),
            height: raster.height(),
            rows,
        }
    }

    /// Builds a mask from explicit runs. Runs need not be maximal (adjacent
    /// runs may repeat a value), but each row must sum to `width`.
    pub fn from_runs(
        slide_id: impl Into<String>,
        round: i32,
        width: usize,
        rows: Vec<Vec<Run>>,
    ) -> Result<Self> {
        for (y, row) in rows.iter().enumerate() {
            let mut total = 0u64;
            for r in row {
                check_mask_value(r.value)?;
                if r.len == 0 {
                    return Err(DialError::Format(format!("zero-length run in row {y}")));
                }
                total += r.len as u64;
            }
            if total != width as u64 {
                return Err(DialError::Format(format!(
                    "row {y} runs sum to {total}, expected {width}"
                )));
            }
        }
        Ok(LabelMask {
            slide_id: slide_id.into(),
            round,
            width,
            height: rows.len(),
            rows,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn rows(&self) -> &[Vec<Run>] {
        &self.rows
    }

    /// Merges adjacent runs of equal value.
    pub fn canonical(&self) -> LabelMask {
        let rows = self
            .rows
            .iter()
            .map(|row| {
                let mut out: Vec<Run> = Vec::with_capacity(row.len());
                for r in row {
                    match out.last_mut() {
                        Some(last) if last.value == r.value => last.len += r.len,
                        _ => out.push(*r),
                    }
                }
                out
            })
            .collect();
        LabelMask {
            slide_id: self.slide_id.clone(),
            round: self.round,
            width: self.width,
            height: self.height,
            rows,
        }
    }

    pub fn decode_row_into(&self, y: usize, out: &mut [u8]) {
        let mut x = 0;
        for r in &self.rows[y] {
            out[x..x + r.len as usize].fill(r.value);
            x += r.len as usize;
        }
    }

    pub fn to_raster(&self) -> LabelRaster {
        let mut raster = LabelRaster::unlabeled(self.width, self.height);
        let w = self.width;
        let raw = raster.as_raw_mut();
        for y in 0..self.height {
            self.decode_row_into(y, &mut raw[y * w..(y + 1) * w]);
        }
        raster
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        let mut start = 0usize;
        for r in &self.rows[y] {
            let end = start + r.len as usize;
            if x < end {
                return r.value;
            }
            start = end;
        }
        panic!("pixel ({x}, {y}) outside a {}-wide mask", self.width);
    }

    pub fn labeled_count(&self) -> u64 {
        self.rows
            .iter()
            .flatten()
            .filter(|r| r.value != UNLABELED)
            .map(|r| r.len as u64)
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.labeled_count() == 0
    }

    pub fn class_counts(&self) -> ClassCounts {
        let mut counts = [0u64; NUM_CLASSES];
        for r in self.rows.iter().flatten() {
            if (r.value as usize) < NUM_CLASSES {
                counts[r.value as usize] += r.len as u64;
            }
        }
        counts
    }

    pub fn encode(&self) -> Vec<u8> {
        let runs: usize = self.rows.iter().map(Vec::len).sum();
        let mut out = Vec::with_capacity(MASK_MAGIC.len() + 12 + runs * 5);
        out.extend_from_slice(MASK_MAGIC);
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&self.round.to_le_bytes());
        for r in self.rows.iter().flatten() {
            out.push(r.value);
            out.extend_from_slice(&r.len.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8], slide_id: impl Into<String>) -> Result<LabelMask> {
        let header = MASK_MAGIC.len() + 12;
        if bytes.len() < header || &bytes[..MASK_MAGIC.len()] != MASK_MAGIC {
            return Err(DialError::Format("missing DIALMASK1 header".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let m = MASK_MAGIC.len();
        let width = u32_at(m) as usize;
        let height = u32_at(m + 4) as usize;
        let round = u32_at(m + 8) as i32;
        let mut pos = header;
        let mut rows = Vec::with_capacity(height);
        for y in 0..height {
            let mut row = Vec::new();
            let mut filled = 0usize;
            while filled < width {
                if pos + 5 > bytes.len() {
                    return Err(DialError::Format(format!("truncated run data in row {y}")));
                }
                let run = Run {
                    value: bytes[pos],
                    len: u32_at(pos + 1),
                };
                pos += 5;
                check_mask_value(run.value)?;
                if run.len == 0 {
                    return Err(DialError::Format(format!("zero-length run in row {y}")));
                }
                filled += run.len as usize;
                row.push(run);
            }
            if filled != width {
                return Err(DialError::Format(format!("row {y} overruns width {width}")));
            }
            rows.push(row);
        }
        if pos != bytes.len() {
            return Err(DialError::Format(format!(
                "{} trailing bytes after mask data",
                bytes.len() - pos
            )));
        }
        Ok(LabelMask {
            slide_id: slide_id.into(),
            round,
            width,
            height,
            rows,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| DialError::io(parent, e))?;
        }
        fs::write(path, self.encode()).map_err(|e| DialError::io(path, e))
    }

    pub fn load(path: &Path, slide_id: impl Into<String>) -> Result<LabelMask> {
        let bytes = fs::read(path).map_err(|e| DialError::io(path, e))?;
        LabelMask::decode(&bytes, slide_id)
    }
}

/// Overlays masks in order: for each pixel, the value of the last mask that
/// labels it wins. Pass masks sorted by round. The result carries the round
/// of the last mask.
pub fn merge_masks(masks: &[LabelMask]) -> Result<LabelMask> {
    let first = masks
        .first()
        .ok_or_else(|| DialError::InvalidConfig("merge_masks needs at least one mask".into()))?;
    for m in &masks[1..] {
        if m.slide_id != first.slide_id {
            return Err(DialError::SlideMismatch {
                expected: first.slide_id.clone(),
                actual: m.slide_id.clone(),
            });
        }
        if m.dims() != first.dims() {
            return Err(DialError::DimensionMismatch {
                expected: first.dims(),
                actual: m.dims(),
            });
        }
    }
    let (w, h) = first.dims();
    let mut merged = vec![UNLABELED; w];
    let mut buf = vec![UNLABELED; w];
    let mut rows = Vec::with_capacity(h);
    for y in 0..h {
        merged.fill(UNLABELED);
        for m in masks {
            m.decode_row_into(y, &mut buf);
            for (dst, &src) in merged.iter_mut().zip(&buf) {
                if src != UNLABELED {
                    *dst = src;
                }
            }
        }
        rows.push(encode_row(&merged));
    }
    Ok(LabelMask {
        slide_id: first.slide_id.clone(),
        round: masks.last().map(|m| m.round).unwrap_or(first.round),
        width: w,
        height: h,
        rows,
    })
}

/// Exact per-class pixel tally over all masks; unlabeled pixels excluded.
pub fn class_pixel_counts(masks: &[LabelMask]) -> ClassCounts {
    let mut counts = [0u64; NUM_CLASSES];
    for m in masks {
        for (c, n) in counts.iter_mut().zip(m.class_counts()) {
            *c += n;
        }
    }
    counts
}
