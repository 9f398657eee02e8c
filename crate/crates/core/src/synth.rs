//! Procedural slides with known ground truth.
//!
//! Each slide is partitioned into smooth random regions: blank background,
//! tumor (split into viable and necrotic by a case-level quantile so that the
//! necrosis ratio hits its target), and non-tumor tissue. Every class is
//! rendered with its own color and grain, and some classes carry a
//! "challenging" variant texture on part of their area. The simulated
//! initial annotator never labels challenging pixels, which leaves room for
//! corrections to matter.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::class::{ClassId, NUM_CLASSES, UNLABELED};
use crate::error::{DialError, Result};
use crate::mask::LabelMask;
use crate::raster::{LabelRaster, RgbImage};
use crate::seed::SeedBuilder;
use crate::wsi::{build_pyramid, WsiPyramid};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassTexture {
    pub base: [u8; 3],
    /// Amplitude of the smooth intensity modulation.
    pub noise: f32,
    /// Feature size of the modulation, in 20× pixels.
    pub blob_scale: f32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChallengingVariant {
    pub class: ClassId,
    pub texture: ClassTexture,
    /// Approximate fraction of the class area rendered with this texture.
    pub coverage: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextureParams {
    pub classes: [ClassTexture; NUM_CLASSES],
    pub variants: Vec<ChallengingVariant>,
    /// Per-pixel white-noise amplitude added on top of every texture.
    pub grain: f32,
}

impl Default for TextureParams {
    fn default() -> Self {
        let t = |base, noise, blob_scale| ClassTexture {
            base,
            noise,
            blob_scale,
        };
        TextureParams {
            classes: [
                t([120, 30, 150], 14.0, 6.0),
                t([215, 120, 175], 30.0, 10.0),
                t([240, 175, 210], 10.0, 16.0),
                t([245, 230, 200], 18.0, 9.0),
                t([200, 90, 110], 12.0, 20.0),
                t([120, 160, 225], 12.0, 14.0),
                t([248, 248, 248], 3.0, 32.0),
            ],
            variants: vec![
                ChallengingVariant {
                    class: ClassId::NecrosisWithoutBone,
                    texture: t([165, 70, 185], 10.0, 8.0),
                    coverage: 0.35,
                },
                ChallengingVariant {
                    class: ClassId::NormalTissue,
                    texture: t([150, 55, 95], 12.0, 12.0),
                    coverage: 0.30,
                },
            ],
            grain: 12.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCaseSpec {
    pub case_id: String,
    pub n_slides: usize,
    pub target_necrosis_ratio: f64,
    pub rng_seed: u64,
    pub texture_params: TextureParams,
    pub width: usize,
    pub height: usize,
    /// Fraction of tissue (non-blank) area that is tumor.
    pub tumor_fraction: f64,
    pub blank_fraction: f64,
    /// Feature size of the tissue regions, in 20× pixels.
    pub region_scale: f32,
}

impl SyntheticCaseSpec {
    pub fn new(case_id: impl Into<String>, target_necrosis_ratio: f64, rng_seed: u64) -> Self {
        SyntheticCaseSpec {
            case_id: case_id.into(),
            n_slides: 1,
            target_necrosis_ratio,
            rng_seed,
            texture_params: TextureParams::default(),
            width: 4096,
            height: 4096,
            tumor_fraction: 0.45,
            blank_fraction: 0.12,
            region_scale: 420.0,
        }
    }

    pub fn with_size(mut self, width: usize, height: usize) -> Self {
        self.width = width;
        self.height = height;
        self
    }

    pub fn with_slides(mut self, n: usize) -> Self {
        self.n_slides = n;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n_slides == 0 {
            return Err(DialError::InvalidConfig(
                "n_slides must be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.target_necrosis_ratio) {
            return Err(DialError::UnreachableTarget(format!(
                "target ratio {} outside [0, 1]",
                self.target_necrosis_ratio
            )));
        }
        if self.tumor_fraction <= 0.0 || self.blank_fraction >= 1.0 {
            return Err(DialError::UnreachableTarget(
                "spec leaves no tumor area, so the necrosis ratio is undefined".into(),
            ));
        }
        if self.tumor_fraction > 1.0 || self.blank_fraction < 0.0 {
            return Err(DialError::InvalidConfig(
                "area fractions must lie in [0, 1]".into(),
            ));
        }
        if self.region_scale < 8.0 {
            return Err(DialError::InvalidConfig(
                "region_scale must be at least 8".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticSlide {
    pub pyramid: WsiPyramid,
    /// Complete ground truth (no unlabeled pixels), round 0.
    pub truth: LabelMask,
    /// Row-major flags for pixels rendered with a challenging variant.
    pub challenging: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct SyntheticCase {
    pub case_id: String,
    pub slides: Vec<SyntheticSlide>,
    pub achieved_ratio: f64,
}

/// Lattice value noise with smoothstep interpolation, values in [-1, 1].
#[derive(Clone, Copy, Debug)]
struct ValueNoise {
    seed: u64,
}

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn hash_unit(seed: u64, ix: i64, iy: i64) -> f32 {
    let h = mix64(
        seed ^ (ix as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
            ^ (iy as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f),
    );
    (h >> 40) as f32 / (1u64 << 23) as f32 - 1.0
}

impl ValueNoise {
    fn new(seed: u64) -> Self {
        ValueNoise { seed }
    }

    #[inline]
    fn sample(&self, x: f32, y: f32) -> f32 {
        let x0 = x.floor();
        let y0 = y.floor();
        let (fx, fy) = (x - x0, y - y0);
        let (ix, iy) = (x0 as i64, y0 as i64);
        let sx = fx * fx * (3.0 - 2.0 * fx);
        let sy = fy * fy * (3.0 - 2.0 * fy);
        let v00 = hash_unit(self.seed, ix, iy);
        let v10 = hash_unit(self.seed, ix + 1, iy);
        let v01 = hash_unit(self.seed, ix, iy + 1);
        let v11 = hash_unit(self.seed, ix + 1, iy + 1);
        let top = v00 + (v10 - v00) * sx;
        let bottom = v01 + (v11 - v01) * sx;
        top + (bottom - top) * sy
    }

    /// Three octaves at feature size `scale`.
    #[inline]
    fn fbm(&self, x: f32, y: f32, scale: f32) -> f32 {
        let (mut amp, mut freq, mut sum, mut norm) = (1.0, 1.0 / scale, 0.0, 0.0);
        for octave in 0..3u64 {
            let n = ValueNoise::new(self.seed.wrapping_add(octave * 0x1000_0001));
            sum += amp * n.sample(x * freq, y * freq);
            norm += amp;
            amp *= 0.5;
            freq *= 2.0;
        }
        sum / norm
    }
}

struct SlideFields {
    blank: ValueNoise,
    tumor: ValueNoise,
    necrosis: ValueNoise,
    bone_split: ValueNoise,
    non_tumor: [ValueNoise; 3],
    variant: ValueNoise,
    texture: ValueNoise,
    grain_seed: u64,
}

impl SlideFields {
    fn new(case_seed: u64, slide_index: usize) -> Self {
        let f = |name: &str| {
            ValueNoise::new(
                SeedBuilder::new("synthetic-field")
                    .u64(case_seed)
                    .u64(slide_index as u64)
                    .str(name)
                    .finish(),
            )
        };
        SlideFields {
            blank: f("blank"),
            tumor: f("tumor"),
            necrosis: f("necrosis"),
            bone_split: f("bone"),
            non_tumor: [f("normal_bone"), f("normal_tissue"), f("cartilage")],
            variant: f("variant"),
            texture: f("texture"),
            grain_seed: f("grain").seed,
        }
    }
}

const NON_TUMOR: [ClassId; 3] = [
    ClassId::NormalBone,
    ClassId::NormalTissue,
    ClassId::Cartilage,
];
// Cartilage is made the scarcest class.
const NON_TUMOR_BIAS: [f32; 3] = [0.0, 0.12, -0.18];
const QUANTILE_STRIDE: usize = 8;

fn quantile(values: &mut [f32], q: f64) -> f32 {
    if values.is_empty() {
        return 0.0;
    }
    let k = ((values.len() as f64 * q).floor() as usize).min(values.len() - 1);
    let (_, v, _) = values.select_nth_unstable_by(k, |a, b| a.total_cmp(b));
    *v
}

struct SlideThresholds {
    blank: f32,
    tumor: f32,
}

fn slide_thresholds(spec: &SyntheticCaseSpec, fields: &SlideFields) -> SlideThresholds {
    let s = spec.region_scale;
    let mut blank = Vec::new();
    let mut pts = Vec::new();
    for y in (0..spec.height).step_by(QUANTILE_STRIDE) {
        for x in (0..spec.width).step_by(QUANTILE_STRIDE) {
            let (fx, fy) = (x as f32, y as f32);
            blank.push(fields.blank.fbm(fx, fy, s * 1.5));
            pts.push((fx, fy));
        }
    }
    let blank_t = if spec.blank_fraction <= 0.0 {
        f32::NEG_INFINITY
    } else {
        quantile(&mut blank.clone(), spec.blank_fraction)
    };
    let mut tumor: Vec<f32> = pts
        .iter()
        .zip(&blank)
        .filter(|(_, &b)| b >= blank_t)
        .map(|(&(x, y), _)| fields.tumor.fbm(x, y, s))
        .collect();
    let tumor_t = if spec.tumor_fraction >= 1.0 {
        f32::NEG_INFINITY
    } else {
        quantile(&mut tumor, 1.0 - spec.tumor_fraction)
    };
    SlideThresholds {
        blank: blank_t,
        tumor: tumor_t,
    }
}

pub fn generate_synthetic_case(spec: &SyntheticCaseSpec) -> Result<SyntheticCase> {
    spec.validate()?;
    let s = spec.region_scale;
    let fields: Vec<SlideFields> = (0..spec.n_slides)
        .map(|i| SlideFields::new(spec.rng_seed, i))
        .collect();
    let thresholds: Vec<SlideThresholds> =
        fields.iter().map(|f| slide_thresholds(spec, f)).collect();

    // Case-level necrosis threshold over sampled tumor pixels of all slides.
    let mut nec_samples = Vec::new();
    for (f, t) in fields.iter().zip(&thresholds) {
        for y in (0..spec.height).step_by(QUANTILE_STRIDE) {
            for x in (0..spec.width).step_by(QUANTILE_STRIDE) {
                let (fx, fy) = (x as f32, y as f32);
                if f.blank.fbm(fx, fy, s * 1.5) >= t.blank && f.tumor.fbm(fx, fy, s) >= t.tumor {
                    nec_samples.push(f.necrosis.fbm(fx, fy, s * 0.6));
                }
            }
        }
    }
    if nec_samples.is_empty() {
        return Err(DialError::UnreachableTarget(
            "generated slides contain no tumor".into(),
        ));
    }
    let target = spec.target_necrosis_ratio;
    let nec_t = if target <= 0.0 {
        f32::NEG_INFINITY
    } else if target >= 1.0 {
        f32::INFINITY
    } else {
        quantile(&mut nec_samples, target)
    };

    let mut slides = Vec::with_capacity(spec.n_slides);
    let (mut p_vt, mut p_nt) = (0u64, 0u64);
    for (i, (f, t)) in fields.iter().zip(&thresholds).enumerate() {
        let (img, labels, challenging) = render_slide(spec, f, t, nec_t);
        let counts = labels.class_counts();
        p_vt += counts[ClassId::ViableTumor.index()];
        p_nt += counts[ClassId::NecrosisWithBone.index()]
            + counts[ClassId::NecrosisWithoutBone.index()];
        let slide_id = format!("{}-s{:02}", spec.case_id, i);
        let truth = LabelMask::from_raster(slide_id.clone(), 0, &labels);
        let pyramid = build_pyramid(slide_id, spec.case_id.clone(), img)?;
        slides.push(SyntheticSlide {
            pyramid,
            truth,
            challenging,
        });
    }
    if p_vt + p_nt == 0 {
        return Err(DialError::UnreachableTarget(
            "generated slides contain no tumor".into(),
        ));
    }
    let achieved_ratio = p_nt as f64 / (p_vt + p_nt) as f64;
    if (achieved_ratio - target).abs() > 0.05 {
        return Err(DialError::UnreachableTarget(format!(
            "achieved ratio {achieved_ratio:.4} misses target {target:.4} by more than 0.05"
        )));
    }
    Ok(SyntheticCase {
        case_id: spec.case_id.clone(),
        slides,
        achieved_ratio,
    })
}

fn render_slide(
    spec: &SyntheticCaseSpec,
    f: &SlideFields,
    t: &SlideThresholds,
    nec_t: f32,
) -> (RgbImage, LabelRaster, Vec<bool>) {
    let (w, h) = (spec.width, spec.height);
    let s = spec.region_scale;
    let params = &spec.texture_params;
    let mut img = RgbImage::new(w, h);
    let mut labels = LabelRaster::new(w, h, ClassId::Blank as u8);
    let mut challenging = vec![false; w * h];
    // Variant thresholds are fixed levels of a zero-mean field, so coverage
    // is approximate.
    let variant_level: Vec<(ClassId, f32, ClassTexture)> = params
        .variants
        .iter()
        .map(|v| {
            let level = 1.0 - 2.0 * v.coverage.clamp(0.0, 1.0);
            (v.class, level * 0.45, v.texture)
        })
        .collect();
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = (x as f32, y as f32);
            let class = if f.blank.fbm(fx, fy, s * 1.5) < t.blank {
                ClassId::Blank
            } else if f.tumor.fbm(fx, fy, s) >= t.tumor {
                if f.necrosis.fbm(fx, fy, s * 0.6) < nec_t {
                    if f.bone_split.fbm(fx, fy, s * 0.5) >= 0.0 {
                        ClassId::NecrosisWithBone
                    } else {
                        ClassId::NecrosisWithoutBone
                    }
                } else {
                    ClassId::ViableTumor
                }
            } else {
                let mut best = 0;
                let mut best_v = f32::NEG_INFINITY;
                for (k, n) in f.non_tumor.iter().enumerate() {
                    let v = n.fbm(fx, fy, s * 0.5) + NON_TUMOR_BIAS[k];
                    if v > best_v {
                        best_v = v;
                        best = k;
                    }
                }
                NON_TUMOR[best]
            };
            let mut tex = params.classes[class.index()];
            for &(vc, level, vt) in &variant_level {
                if vc == class && f.variant.fbm(fx, fy, s * 0.4) > level {
                    tex = vt;
                    challenging[y * w + x] = true;
                }
            }
            let modulation = tex.noise * f.texture.sample(fx / tex.blob_scale, fy / tex.blob_scale);
            let mut rgb = [0u8; 3];
            for (c, out) in rgb.iter_mut().enumerate() {
                let grain = params.grain * hash_unit(f.grain_seed ^ c as u64, x as i64, y as i64);
                *out = (tex.base[c] as f32 + modulation + grain)
                    .round()
                    .clamp(0.0, 255.0) as u8;
            }
            img.put_pixel(x, y, rgb);
            labels.set(x, y, class as u8);
        }
    }
    (img, labels, challenging)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationParams {
    /// Target fraction of slide pixels to label.
    pub fraction: f64,
    /// Brush disk radius in 20× pixels.
    pub radius: usize,
    pub seed: u64,
    pub max_attempts: usize,
}

impl Default for AnnotationParams {
    fn default() -> Self {
        AnnotationParams {
            fraction: 0.10,
            radius: 96,
            seed: 0,
            max_attempts: 20_000,
        }
    }
}

/// Simulated initial annotator: paints disks inside characteristic
/// (non-challenging) regions, each class up to a budget proportional to its
/// area. Labels always agree with the ground truth.
pub fn simulate_initial_annotation(slide: &SyntheticSlide, params: &AnnotationParams) -> LabelMask {
    let truth = slide.truth.to_raster();
    let (w, h) = truth.dims();
    let counts = truth.class_counts();
    let mut budget: Vec<i64> = counts
        .iter()
        .map(|&c| (c as f64 * params.fraction).round() as i64)
        .collect();
    let mut out = LabelRaster::unlabeled(w, h);
    let mut rng = SeedBuilder::new("initial-annotation")
        .u64(params.seed)
        .str(&slide.truth.slide_id)
        .rng();
    for _ in 0..params.max_attempts {
        if budget.iter().all(|&b| b <= 0) {
            break;
        }
        let cx = rng.random_range(0..w) as i64;
        let cy = rng.random_range(0..h) as i64;
        let idx = cy as usize * w + cx as usize;
        let class = truth.as_raw()[idx];
        if slide.challenging[idx] || budget[class as usize] <= 0 || out.as_raw()[idx] != UNLABELED {
            continue;
        }
        // Shrink the brush when little budget is left for this class.
        let fit = (budget[class as usize] as f64 / std::f64::consts::PI).sqrt() as i64;
        let r = fit.clamp(12, params.radius as i64);
        for y in (cy - r).max(0)..(cy + r + 1).min(h as i64) {
            for x in (cx - r).max(0)..(cx + r + 1).min(w as i64) {
                let (dx, dy) = (x - cx, y - cy);
                if dx * dx + dy * dy > r * r {
                    continue;
                }
                let i = y as usize * w + x as usize;
                if truth.as_raw()[i] == class
                    && !slide.challenging[i]
                    && out.as_raw()[i] == UNLABELED
                {
                    out.as_raw_mut()[i] = class;
                    budget[class as usize] -= 1;
                }
            }
        }
    }
    LabelMask::from_raster(slide.truth.slide_id.clone(), 0, &out)
}
