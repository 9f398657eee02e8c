use dial_core::mask::Run;
use dial_core::synth::{
    generate_synthetic_case, simulate_initial_annotation, AnnotationParams, SyntheticCaseSpec,
};
use dial_core::wsi::{downsample_box, load_slide, read_tile, save_slide, tile, SlideManifest};
use dial_core::{build_pyramid, merge_masks, LabelMask, LabelRaster, RgbImage, UNLABELED};
use proptest::prelude::*;

fn raster(max_w: usize, max_h: usize) -> impl Strategy<Value = LabelRaster> {
    (1..=max_w, 1..=max_h).prop_flat_map(|(w, h)| {
        prop::collection::vec(prop_oneof![4 => 0u8..7, 1 => Just(UNLABELED)], w * h)
            .prop_map(move |d| LabelRaster::from_raw(w, h, d).unwrap())
    })
}

/// Splits every run at random points; the logical mask is unchanged.
fn rechunk(m: &LabelMask, cuts: &[u32]) -> LabelMask {
    let mut k = 0;
    let rows = m
        .rows()
        .iter()
        .map(|row| {
            let mut out = Vec::new();
            for r in row {
                let c = cuts[k % cuts.len()] % r.len;
                k += 1;
                if c == 0 {
                    out.push(*r);
                } else {
                    out.push(Run {
                        value: r.value,
                        len: c,
                    });
                    out.push(Run {
                        value: r.value,
                        len: r.len - c,
                    });
                }
            }
            out
        })
        .collect();
    LabelMask::from_runs(m.slide_id.clone(), m.round, m.width(), rows).unwrap()
}

proptest! {
    #[test]
    fn rle_round_trip(r in raster(40, 12), round in -1i32..5) {
        let m = LabelMask::from_raster("s", round, &r);
        prop_assert_eq!(m.to_raster(), r.clone());
        let back = LabelMask::decode(&m.encode(), "s").unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(back.labeled_count() as usize, r.labeled_count());
        prop_assert_eq!(back.class_counts(), r.class_counts());
    }

    #[test]
    fn chunking_does_not_change_meaning(r in raster(30, 8), cuts in prop::collection::vec(0u32..30, 1..10)) {
        let m = LabelMask::from_raster("s", 2, &r);
        let split = rechunk(&m, &cuts);
        prop_assert_eq!(split.to_raster(), r);
        prop_assert_eq!(split.canonical(), m.canonical());
        prop_assert_eq!(LabelMask::decode(&split.encode(), "s").unwrap().to_raster(), split.to_raster());
    }

    #[test]
    fn merge_matches_pixelwise_oracle(layers in prop::collection::vec(raster(16, 1).prop_map(|r| r.as_raw().to_vec()), 1..5)) {
        // All layers share the first layer's width.
        let w = layers[0].len();
        let masks: Vec<LabelMask> = layers
            .iter()
            .enumerate()
            .map(|(k, l)| {
                let mut row = l.clone();
                row.resize(w, UNLABELED);
                LabelMask::from_raster("s", k as i32, &LabelRaster::from_raw(w, 1, row).unwrap())
            })
            .collect();
        let merged = merge_masks(&masks).unwrap();
        for x in 0..w {
            let want = masks.iter().rev().map(|m| m.get(x, 0)).find(|&v| v != UNLABELED).unwrap_or(UNLABELED);
            prop_assert_eq!(merged.get(x, 0), want);
        }
        prop_assert_eq!(merged.round, masks.len() as i32 - 1);
    }

    #[test]
    fn box_filter_matches_block_means(w in 1usize..20, h in 1usize..20, seed in 0u8..255, factor in 1usize..5) {
        let data: Vec<u8> = (0..w * h * 3).map(|i| (i as u8).wrapping_mul(seed).wrapping_add(i as u8 / 3)).collect();
        let img = RgbImage::from_raw(w, h, data).unwrap();
        let out = downsample_box(&img, factor);
        prop_assert_eq!(out.dims(), (w.div_ceil(factor), h.div_ceil(factor)));
        for oy in 0..out.height() {
            for ox in 0..out.width() {
                for c in 0..3 {
                    let (mut s, mut n) = (0u32, 0u32);
                    for y in oy * factor..((oy + 1) * factor).min(h) {
                        for x in ox * factor..((ox + 1) * factor).min(w) {
                            s += img.pixel(x, y)[c] as u32;
                            n += 1;
                        }
                    }
                    let mean = s as f64 / n as f64;
                    prop_assert_eq!(out.pixel(ox, oy)[c], (mean + 0.5).floor() as u8);
                }
            }
        }
    }
}

#[test]
fn pyramid_levels_and_tiles_survive_disk() {
    let img = RgbImage::from_raw(
        1100,
        1030,
        (0..1100 * 1030 * 3).map(|i| (i % 251) as u8).collect(),
    )
    .unwrap();
    let p = build_pyramid("s1", "c1", img).unwrap();
    assert_eq!(p.level(1).dims(), (550, 515));
    assert_eq!(p.level(2).dims(), (275, 258));
    let m = SlideManifest::for_pyramid(&p, Some(3));
    assert_eq!((m.levels[0].tile_cols, m.levels[0].tile_rows), (5, 5));
    assert_eq!((m.levels[2].tile_cols, m.levels[2].tile_rows), (2, 2));

    let dir = tempfile::tempdir().unwrap();
    save_slide(&p, dir.path(), Some(3)).unwrap();
    assert_eq!(load_slide(dir.path()).unwrap(), p);
    // Edge tiles are cropped, not padded.
    let t = read_tile(dir.path(), 0, 4, 4).unwrap();
    assert_eq!(t.dims(), (1100 - 1024, 1030 - 1024));
    assert_eq!(Some(t), tile(&p, 0, 4, 4));
    assert!(tile(&p, 2, 2, 0).is_none());
}

#[test]
fn synthetic_cases_are_reproducible_and_hit_their_ratio() {
    let spec = SyntheticCaseSpec::new("c", 0.35, 17)
        .with_size(1024, 1024)
        .with_slides(2);
    let a = generate_synthetic_case(&spec).unwrap();
    let b = generate_synthetic_case(&spec).unwrap();
    assert_eq!(a.slides.len(), 2);
    for (x, y) in a.slides.iter().zip(&b.slides) {
        assert_eq!(x.pyramid, y.pyramid);
        assert_eq!(x.truth, y.truth);
    }
    let (mut vt, mut nt) = (0u64, 0u64);
    for s in &a.slides {
        let c = s.truth.class_counts();
        vt += c[0];
        nt += c[1] + c[2];
        assert_eq!(s.truth.labeled_count(), 1024 * 1024);
    }
    let ratio = nt as f64 / (vt + nt) as f64;
    assert!((ratio - a.achieved_ratio).abs() < 1e-12);
    assert!((ratio - 0.35).abs() < 0.05, "{ratio}");

    let other =
        generate_synthetic_case(&SyntheticCaseSpec::new("c", 0.35, 18).with_size(1024, 1024))
            .unwrap();
    assert_ne!(other.slides[0].pyramid, a.slides[0].pyramid);
}

#[test]
fn initial_annotation_is_a_sparse_subset_of_truth() {
    let case = generate_synthetic_case(&SyntheticCaseSpec::new("c", 0.6, 4).with_size(1024, 1024))
        .unwrap();
    let slide = &case.slides[0];
    let ann = simulate_initial_annotation(slide, &AnnotationParams::default());
    let frac = ann.labeled_count() as f64 / (1024.0 * 1024.0);
    assert!(frac > 0.02 && frac < 0.25, "{frac}");
    let (truth, a) = (slide.truth.to_raster(), ann.to_raster());
    for (i, (&t, &v)) in truth.as_raw().iter().zip(a.as_raw()).enumerate() {
        if v != UNLABELED {
            assert_eq!(v, t);
            // Challenging variants are left for corrections.
            assert!(!slide.challenging[i]);
        }
    }
}
