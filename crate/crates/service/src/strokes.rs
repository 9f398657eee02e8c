//! Correction strokes and their deterministic rasterization.
//!
//! Coordinates are 20× pixels. Brush vertices are rounded half away from
//! zero to pixel indices and a disk is stamped at every pixel of the
//! Bresenham line between consecutive vertices. Polygons are filled with
//! the even-odd rule, sampling pixel `(x, y)` at its center
//! `(x + 0.5, y + 0.5)`, so a polygon with corners on integer coordinates
//! covers exactly the pixels inside it.

use dial_core::{LabelRaster, NUM_CLASSES, UNLABELED};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_BRUSH_RADIUS: f64 = 1024.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Stroke {
    Brush {
        class_id: u8,
        brush_radius: f64,
        points: Vec<[f64; 2]>,
    },
    Polygon {
        class_id: u8,
        points: Vec<[f64; 2]>,
    },
}

#[derive(Debug, Error, PartialEq)]
pub enum StrokeError {
    #[error("stroke has no points")]
    Empty,
    #[error("polygon needs at least three vertices, got {0}")]
    DegeneratePolygon(usize),
    #[error("class {0} is not one of the {NUM_CLASSES} classes")]
    InvalidClass(u8),
    #[error("coordinates and radius must be finite")]
    NonFinite,
    #[error("brush radius {0} outside [0, {MAX_BRUSH_RADIUS}]")]
    BadRadius(f64),
}

impl Stroke {
    pub fn class_id(&self) -> u8 {
        match self {
            Stroke::Brush { class_id, .. } | Stroke::Polygon { class_id, .. } => *class_id,
        }
    }

    pub fn points(&self) -> &[[f64; 2]] {
        match self {
            Stroke::Brush { points, .. } | Stroke::Polygon { points, .. } => points,
        }
    }

    pub fn validate(&self) -> Result<(), StrokeError> {
        if self.class_id() as usize >= NUM_CLASSES {
            return Err(StrokeError::InvalidClass(self.class_id()));
        }
        let pts = self.points();
        if pts.is_empty() {
            return Err(StrokeError::Empty);
        }
        if pts.iter().flatten().any(|v| !v.is_finite()) {
            return Err(StrokeError::NonFinite);
        }
        match self {
            Stroke::Brush { brush_radius, .. } => {
                if !brush_radius.is_finite() {
                    return Err(StrokeError::NonFinite);
                }
                if !(0.0..=MAX_BRUSH_RADIUS).contains(brush_radius) {
                    return Err(StrokeError::BadRadius(*brush_radius));
                }
            }
            Stroke::Polygon { points, .. } if points.len() < 3 => {
                return Err(StrokeError::DegeneratePolygon(points.len()));
            }
            Stroke::Polygon { .. } => {}
        }
        Ok(())
    }

    /// Paints the stroke into `raster`; returns the number of pixels set.
    pub fn paint(&self, raster: &mut LabelRaster) -> Result<u64, StrokeError> {
        self.validate()?;
        Ok(match self {
            Stroke::Brush {
                class_id,
                brush_radius,
                points,
            } => paint_brush(raster, *class_id, *brush_radius, points),
            Stroke::Polygon { class_id, points } => paint_polygon(raster, *class_id, points),
        })
    }
}

fn clamp_index(v: f64, len: usize) -> i64 {
    // f64::round rounds half away from zero.
    (v.round() as i64).clamp(0, len as i64 - 1)
}

fn bresenham(a: (i64, i64), b: (i64, i64), mut f: impl FnMut(i64, i64)) {
    let (mut x, mut y) = a;
    let (dx, dy) = ((b.0 - x).abs(), -(b.1 - y).abs());
    let (sx, sy) = (if x < b.0 { 1 } else { -1 }, if y < b.1 { 1 } else { -1 });
    let mut err = dx + dy;
    loop {
        f(x, y);
        if (x, y) == b {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn paint_brush(raster: &mut LabelRaster, class: u8, radius: f64, points: &[[f64; 2]]) -> u64 {
    let (w, h) = raster.dims();
    let verts: Vec<(i64, i64)> = points
        .iter()
        .map(|p| (clamp_index(p[0], w), clamp_index(p[1], h)))
        .collect();
    let reach = radius.floor() as i64;
    let r2 = radius * radius;
    let mut painted = 0;
    let mut stamp = |cx: i64, cy: i64| {
        for y in (cy - reach).max(0)..=(cy + reach).min(h as i64 - 1) {
            for x in (cx - reach).max(0)..=(cx + reach).min(w as i64 - 1) {
                let (dx, dy) = ((x - cx) as f64, (y - cy) as f64);
                if dx * dx + dy * dy <= r2 {
                    raster.set(x as usize, y as usize, class);
                    painted += 1;
                }
            }
        }
    };
    if verts.len() == 1 {
        stamp(verts[0].0, verts[0].1);
    }
    for pair in verts.windows(2) {
        bresenham(pair[0], pair[1], &mut stamp);
    }
    painted
}

fn paint_polygon(raster: &mut LabelRaster, class: u8, points: &[[f64; 2]]) -> u64 {
    let (w, h) = raster.dims();
    let verts: Vec<(f64, f64)> = points
        .iter()
        .map(|p| (p[0].clamp(0.0, w as f64), p[1].clamp(0.0, h as f64)))
        .collect();
    let ymin = verts
        .iter()
        .map(|v| v.1)
        .fold(f64::INFINITY, f64::min)
        .floor()
        .max(0.0) as usize;
    let ymax = (verts.iter().map(|v| v.1).fold(0.0, f64::max).ceil() as usize).min(h);
    let mut painted = 0;
    let mut xs = Vec::new();
    for y in ymin..ymax {
        let yc = y as f64 + 0.5;
        xs.clear();
        for i in 0..verts.len() {
            let (a, b) = (verts[i], verts[(i + 1) % verts.len()]);
            if (a.1 > yc) != (b.1 > yc) {
                xs.push(a.0 + (yc - a.1) * (b.0 - a.0) / (b.1 - a.1));
            }
        }
        xs.sort_by(f64::total_cmp);
        for span in xs.chunks_exact(2) {
            // Centers in [left, right).
            let first = (span[0] - 0.5).ceil().max(0.0) as usize;
            let end = ((span[1] - 0.5).ceil().max(0.0) as usize).min(w);
            for x in first..end {
                raster.set(x, y, class);
                painted += 1;
            }
        }
    }
    painted
}

/// Replays strokes in order onto an unlabeled `width × height` raster;
/// later strokes win where they overlap.
pub fn rasterize_strokes(
    strokes: &[Stroke],
    width: usize,
    height: usize,
) -> Result<LabelRaster, StrokeError> {
    let mut out = LabelRaster::unlabeled(width, height);
    for s in strokes {
        s.paint(&mut out)?;
    }
    Ok(out)
}

/// Overwrites `base` wherever `delta` is labeled.
pub fn apply_delta(base: &mut LabelRaster, delta: &LabelRaster) {
    for (b, &d) in base.as_raw_mut().iter_mut().zip(delta.as_raw()) {
        if d != UNLABELED {
            *b = d;
        }
    }
}
