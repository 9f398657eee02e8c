use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::PatchRecord;
use crate::raster::{LabelRaster, RgbImage};
use crate::seed::SeedBuilder;

/// Elastic deformation: Gaussian displacements (std `alpha` pixels) on a
/// `grid`×`grid` control lattice, upsampled with cubic convolution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeformParams {
    pub alpha: f32,
    pub grid: usize,
}

impl Default for DeformParams {
    fn default() -> Self {
        DeformParams {
            alpha: 10.0,
            grid: 8,
        }
    }
}

/// Keys cubic convolution kernel, a = -0.5.
fn cubic_weights(t: f32) -> [f32; 4] {
    let a = -0.5f32;
    let w = |x: f32| {
        let x = x.abs();
        if x <= 1.0 {
            (a + 2.0) * x * x * x - (a + 3.0) * x * x + 1.0
        } else if x < 2.0 {
            a * x * x * x - 5.0 * a * x * x + 8.0 * a * x - 4.0 * a
        } else {
            0.0
        }
    };
    [w(1.0 + t), w(t), w(1.0 - t), w(2.0 - t)]
}

/// Bicubic upsampling of a `g`×`g` lattice spanning `[0, size-1]²`.
fn upsample_lattice(lattice: &[f32], g: usize, size: usize) -> Vec<f32> {
    let step = if size > 1 {
        (g - 1) as f32 / (size - 1) as f32
    } else {
        0.0
    };
    let at = |i: i64, j: i64| {
        let i = i.clamp(0, g as i64 - 1) as usize;
        let j = j.clamp(0, g as i64 - 1) as usize;
        lattice[j * g + i]
    };
    // Separable: precompute per-axis taps.
    let taps: Vec<(i64, [f32; 4])> = (0..size)
        .map(|p| {
            let u = p as f32 * step;
            let i = u.floor();
            (i as i64, cubic_weights(u - i))
        })
        .collect();
    let mut out = vec![0.0; size * size];
    for (y, &(jy, wy)) in taps.iter().enumerate() {
        for (x, &(ix, wx)) in taps.iter().enumerate() {
            let mut v = 0.0;
            for (dj, wyj) in wy.iter().enumerate() {
                let mut row = 0.0;
                for (di, wxi) in wx.iter().enumerate() {
                    row += wxi * at(ix + di as i64 - 1, jy + dj as i64 - 1);
                }
                v += wyj * row;
            }
            out[y * size + x] = v;
        }
    }
    out
}

struct Field {
    dx: Vec<f32>,
    dy: Vec<f32>,
}

fn displacement_field(size: usize, seed: u64, params: &DeformParams) -> Field {
    let g = params.grid.max(2);
    let mut rng = SeedBuilder::new("elastic").u64(seed).rng();
    let alpha = params.alpha.max(0.0);
    let lattice = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f32> {
        if alpha == 0.0 {
            return vec![0.0; g * g];
        }
        let normal = Normal::new(0.0f32, alpha).expect("finite alpha");
        (0..g * g).map(|_| normal.sample(rng)).collect()
    };
    let lx = lattice(&mut rng);
    let ly = lattice(&mut rng);
    Field {
        dx: upsample_lattice(&lx, g, size),
        dy: upsample_lattice(&ly, g, size),
    }
}

fn warp_rgb(src: &RgbImage, field: &Field) -> RgbImage {
    let (w, h) = src.dims();
    let mut out = RgbImage::new(w, h);
    let clamp_x = |v: i64| v.clamp(0, w as i64 - 1) as usize;
    let clamp_y = |v: i64| v.clamp(0, h as i64 - 1) as usize;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let sx = x as f32 + field.dx[i];
            let sy = y as f32 + field.dy[i];
            let (fx, fy) = (sx.floor(), sy.floor());
            let (tx, ty) = (sx - fx, sy - fy);
            let (x0, y0) = (fx as i64, fy as i64);
            let p00 = src.pixel(clamp_x(x0), clamp_y(y0));
            let p10 = src.pixel(clamp_x(x0 + 1), clamp_y(y0));
            let p01 = src.pixel(clamp_x(x0), clamp_y(y0 + 1));
            let p11 = src.pixel(clamp_x(x0 + 1), clamp_y(y0 + 1));
            let mut rgb = [0u8; 3];
            for c in 0..3 {
                let top = p00[c] as f32 * (1.0 - tx) + p10[c] as f32 * tx;
                let bottom = p01[c] as f32 * (1.0 - tx) + p11[c] as f32 * tx;
                rgb[c] = (top * (1.0 - ty) + bottom * ty).round().clamp(0.0, 255.0) as u8;
            }
            out.put_pixel(x, y, rgb);
        }
    }
    out
}

fn warp_labels(src: &LabelRaster, field: &Field) -> LabelRaster {
    let (w, h) = src.dims();
    let mut out = LabelRaster::unlabeled(w, h);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let sx = (x as f32 + field.dx[i]).round() as i64;
            let sy = (y as f32 + field.dy[i]).round() as i64;
            let v = src.get(
                sx.clamp(0, w as i64 - 1) as usize,
                sy.clamp(0, h as i64 - 1) as usize,
            );
            out.set(x, y, v);
        }
    }
    out
}

/// Warps all three magnifications with one displacement field (in each
/// crop's own pixel units): images bilinearly, the target by nearest
/// neighbor so no new label values appear. Samples outside the crop clamp to
/// the edge.
pub fn elastic_deform(patch: &PatchRecord, seed: u64, params: &DeformParams) -> PatchRecord {
    let field = displacement_field(patch.size(), seed, params);
    PatchRecord {
        slide_id: patch.slide_id.clone(),
        case_id: patch.case_id.clone(),
        center: patch.center,
        img20: warp_rgb(&patch.img20, &field),
        img10: warp_rgb(&patch.img10, &field),
        img5: warp_rgb(&patch.img5, &field),
        target: warp_labels(&patch.target, &field),
        round: patch.round,
        deformed: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::class::UNLABELED;

    fn patch(size: usize) -> PatchRecord {
        let mut img = RgbImage::new(size, size);
        let mut target = LabelRaster::unlabeled(size, size);
        for y in 0..size {
            for x in 0..size {
                img.put_pixel(x, y, [(x * 7) as u8, (y * 5) as u8, ((x + y) * 3) as u8]);
                if (x / 4 + y / 3) % 3 == 0 {
                    target.set(x, y, 0);
                }
            }
        }
        PatchRecord {
            slide_id: "s".into(),
            case_id: "c".into(),
            center: (8, 8),
            img20: img.clone(),
            img10: img.clone(),
            img5: img,
            target,
            round: 0,
            deformed: false,
        }
    }

    #[test]
    fn zero_alpha_is_identity() {
        let p = patch(32);
        let d = elastic_deform(
            &p,
            3,
            &DeformParams {
                alpha: 0.0,
                grid: 8,
            },
        );
        assert_eq!(d.img20, p.img20);
        assert_eq!(d.img5, p.img5);
        assert_eq!(d.target, p.target);
        assert!(d.deformed);
    }

    #[test]
    fn nearest_neighbor_adds_no_labels() {
        let p = patch(32);
        let d = elastic_deform(&p, 11, &DeformParams::default());
        assert!(d.target.as_raw().iter().all(|&v| v == 0 || v == UNLABELED));
        assert_ne!(d.target, p.target);
    }

    #[test]
    fn deterministic_in_seed() {
        let p = patch(32);
        let a = elastic_deform(&p, 5, &DeformParams::default());
        let b = elastic_deform(&p, 5, &DeformParams::default());
        let c = elastic_deform(&p, 6, &DeformParams::default());
        assert_eq!(a, b);
        assert_ne!(a.img20, c.img20);
    }

    #[test]
    fn lattice_interpolates_control_points() {
        let lattice: Vec<f32> = (0..16).map(|v| v as f32).collect();
        let up = upsample_lattice(&lattice, 4, 10);
        // Control points sit at pixel 0, 3, 6, 9.
        assert!((up[0] - 0.0).abs() < 1e-5);
        assert!((up[3] - 1.0).abs() < 1e-5);
        assert!((up[9 * 10 + 9] - 15.0).abs() < 1e-5);
        // A linear lattice stays linear under cubic convolution.
        assert!((up[4] - 4.0 / 3.0).abs() < 1e-5);
    }
}
