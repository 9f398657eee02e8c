//! Plain in-memory rasters: interleaved 8-bit RGB images and dense label maps.

use std::io::Cursor;

use crate::class::{check_mask_value, ClassCounts, NUM_CLASSES, UNLABELED};
use crate::error::{DialError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        RgbImage {
            width,
            height,
            data,
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(DialError::Format(format!(
                "rgb buffer of {} bytes does not match {width}x{height}",
                data.len()
            )));
        }
        Ok(RgbImage {
            width,
            height,
            data,
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

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn as_raw_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn put_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Copies a `w`×`h` window whose top-left corner may lie outside the
    /// image; pixels outside the bounds are zero.
    pub fn crop_padded(&self, x0: i64, y0: i64, w: usize, h: usize) -> RgbImage {
        let mut out = RgbImage::new(w, h);
        let xs = x0.max(0);
        let xe = (x0 + w as i64).min(self.width as i64);
        if xs >= xe {
            return out;
        }
        for oy in 0..h {
            let sy = y0 + oy as i64;
            if sy < 0 || sy >= self.height as i64 {
                continue;
            }
            let src = (sy as usize * self.width + xs as usize) * 3;
            let dst = (oy * w + (xs - x0) as usize) * 3;
            let n = (xe - xs) as usize * 3;
            out.data[dst..dst + n].copy_from_slice(&self.data[src..src + n]);
        }
        out
    }

    /// Writes `tile` at (`x0`,`y0`), clipping whatever overruns the bounds.
    pub fn blit(&mut self, tile: &RgbImage, x0: usize, y0: usize) {
        let w = tile.width.min(self.width.saturating_sub(x0));
        for ty in 0..tile.height {
            let y = y0 + ty;
            if y >= self.height {
                break;
            }
            let dst = (y * self.width + x0) * 3;
            let src = ty * tile.width * 3;
            self.data[dst..dst + w * 3].copy_from_slice(&tile.data[src..src + w * 3]);
        }
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut buf, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc
                .write_header()
                .map_err(|e| DialError::Png(e.to_string()))?;
            writer
                .write_image_data(&self.data)
                .map_err(|e| DialError::Png(e.to_string()))?;
        }
        Ok(buf)
    }

    pub fn decode_png(bytes: &[u8]) -> Result<RgbImage> {
        let decoder = png::Decoder::new(Cursor::new(bytes));
        let mut reader = decoder
            .read_info()
            .map_err(|e| DialError::Png(e.to_string()))?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| DialError::Png("image too large".into()))?;
        let mut buf = vec![0; size];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| DialError::Png(e.to_string()))?;
        if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
            return Err(DialError::Png(format!(
                "expected 8-bit RGB, got {:?}/{:?}",
                info.color_type, info.bit_depth
            )));
        }
        buf.truncate(info.buffer_size());
        RgbImage::from_raw(info.width as usize, info.height as usize, buf)
    }
}

/// Dense per-pixel labels (class index or [`UNLABELED`]).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelRaster {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl LabelRaster {
    pub fn new(width: usize, height: usize, fill: u8) -> Self {
        LabelRaster {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn unlabeled(width: usize, height: usize) -> Self {
        Self::new(width, height, UNLABELED)
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(DialError::Format(format!(
                "label buffer of {} bytes does not match {width}x{height}",
                data.len()
            )));
        }
        for &v in &data {
            check_mask_value(v)?;
        }
        Ok(LabelRaster {
            width,
            height,
            data,
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

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn as_raw_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    pub fn row(&self, y: usize) -> &[u8] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    /// Window copy; outside the bounds is filled with `fill`.
    pub fn crop_padded(&self, x0: i64, y0: i64, w: usize, h: usize, fill: u8) -> LabelRaster {
        let mut out = LabelRaster::new(w, h, fill);
        let xs = x0.max(0);
        let xe = (x0 + w as i64).min(self.width as i64);
        if xs >= xe {
            return out;
        }
        for oy in 0..h {
            let sy = y0 + oy as i64;
            if sy < 0 || sy >= self.height as i64 {
                continue;
            }
            let src = sy as usize * self.width + xs as usize;
            let dst = oy * w + (xs - x0) as usize;
            let n = (xe - xs) as usize;
            out.data[dst..dst + n].copy_from_slice(&self.data[src..src + n]);
        }
        out
    }

    pub fn labeled_count(&self) -> usize {
        self.data.iter().filter(|&&v| v != UNLABELED).count()
    }

    pub fn class_counts(&self) -> ClassCounts {
        let mut counts = [0u64; NUM_CLASSES];
        for &v in &self.data {
            if (v as usize) < NUM_CLASSES {
                counts[v as usize] += 1;
            }
        }
        counts
    }
}
