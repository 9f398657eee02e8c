use std::collections::BTreeSet;
use std::sync::OnceLock;

use dial_core::mask::Run;
use dial_core::patch::{
    assign_validation_cases, balance_by_deformation, compute_weights, elastic_deform,
    extract_patches, patch_class_counts, split_by_case, BalanceParams, DeformParams, PatchRecord,
    PatchStore,
};
use dial_core::{
    build_pyramid, LabelMask, LabelRaster, RgbImage, WsiPyramid, NUM_CLASSES, UNLABELED,
};
use proptest::prelude::*;

fn slide() -> &'static WsiPyramid {
    static SLIDE: OnceLock<WsiPyramid> = OnceLock::new();
    SLIDE.get_or_init(|| {
        let mut img = RgbImage::new(1024, 1024);
        for y in 0..1024 {
            for x in 0..1024 {
                img.put_pixel(
                    x,
                    y,
                    [(x % 256) as u8, (y % 256) as u8, ((x ^ y) % 256) as u8],
                );
            }
        }
        build_pyramid("s", "c", img).unwrap()
    })
}

/// Labeled rectangles `(x, y, w, h, class)` on an otherwise unlabeled slide.
fn rect_raster(rects: &[(usize, usize, usize, usize, u8)]) -> LabelRaster {
    let mut r = LabelRaster::unlabeled(1024, 1024);
    for &(x0, y0, w, h, c) in rects {
        for y in y0..(y0 + h).min(1024) {
            for x in x0..(x0 + w).min(1024) {
                r.set(x, y, c);
            }
        }
    }
    r
}

fn rects() -> impl Strategy<Value = Vec<(usize, usize, usize, usize, u8)>> {
    prop::collection::vec(
        (0usize..1024, 0usize..1024, 1usize..200, 1usize..200, 0u8..7),
        1..6,
    )
}

fn synthetic_patch(size: usize, seed: u64, case: &str) -> PatchRecord {
    let mut img = RgbImage::new(size, size);
    let mut target = LabelRaster::unlabeled(size, size);
    for y in 0..size {
        for x in 0..size {
            let v = (x as u64 * 31 + y as u64 * 17 + seed * 7) % 256;
            img.put_pixel(x, y, [v as u8, (v * 3 % 256) as u8, (255 - v) as u8]);
            let c = ((x / 5 + y / 7) as u64 + seed) % 9;
            target.set(x, y, if c < 7 { c as u8 } else { UNLABELED });
        }
    }
    PatchRecord {
        slide_id: format!("s{seed}"),
        case_id: case.to_string(),
        center: (size as i64 / 2, size as i64 / 2),
        img20: img.clone(),
        img10: img.clone(),
        img5: img,
        target,
        round: 0,
        deformed: false,
    }
}

fn class_set(r: &LabelRaster) -> BTreeSet<u8> {
    r.as_raw()
        .iter()
        .copied()
        .filter(|&v| v != UNLABELED)
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, ..ProptestConfig::default() })]

    #[test]
    fn weights_always_sum_to_six(counts in prop::array::uniform7(0u64..1_000_000_000)) {
        prop_assume!(counts.iter().sum::<u64>() > 0);
        let w = compute_weights(&counts).unwrap();
        prop_assert!((w.0.iter().sum::<f64>() - (NUM_CLASSES as f64 - 1.0)).abs() < 1e-9);
        for (&wc, &pc) in w.0.iter().zip(&counts) {
            prop_assert!((0.0..=1.0).contains(&wc));
            prop_assert_eq!(wc == 1.0, pc == 0);
        }
    }

    #[test]
    fn extraction_ignores_run_chunking(rs in rects()) {
        let raster = rect_raster(&rs);
        let whole = LabelMask::from_raster("s", 0, &raster);
        // One run per pixel.
        let rows = (0..1024)
            .map(|y| raster.row(y).iter().map(|&v| Run { value: v, len: 1 }).collect())
            .collect();
        let split = LabelMask::from_runs("s", 0, 1024, rows).unwrap();
        let a = extract_patches(slide(), &whole, 64, 64).unwrap();
        let b = extract_patches(slide(), &split, 64, 64).unwrap();
        prop_assert_eq!(a.len(), b.len());
        prop_assert!(a == b);
        for p in &a {
            prop_assert!(p.target.labeled_count() * 100 > 64 * 64);
            prop_assert_eq!(p.size(), 64);
        }
        // Every window that passes the threshold is present.
        let expected = (0..16)
            .flat_map(|gy| (0..16).map(move |gx| (gx, gy)))
            .filter(|&(gx, gy)| raster.crop_padded(gx * 64, gy * 64, 64, 64, UNLABELED).labeled_count() * 100 > 4096)
            .count();
        prop_assert_eq!(a.len(), expected);
    }

    #[test]
    fn deformation_never_invents_classes(seed in any::<u64>(), alpha in 0.0f32..20.0, base in 0u64..50) {
        let p = synthetic_patch(32, base, "c");
        let d = elastic_deform(&p, seed, &DeformParams { alpha, grid: 8 });
        prop_assert!(class_set(&d.target).is_subset(&class_set(&p.target)));
        prop_assert!(d.deformed);
        prop_assert_eq!((d.center, d.round), (p.center, p.round));
        prop_assert_eq!(d.img5.dims(), p.img5.dims());
    }

    #[test]
    fn balancing_only_appends(n in 1usize..8, k_max in 0usize..4, seed in any::<u64>()) {
        let input: Vec<_> = (0..n).map(|i| synthetic_patch(16, i as u64 * 3, "c")).collect();
        let params = BalanceParams { k_max, seed, ..BalanceParams::default() };
        let out = balance_by_deformation(input.clone(), &params);
        prop_assert!(out.len() <= n * (1 + k_max));
        prop_assert!(out[..n] == input[..]);
        prop_assert!(out[n..].iter().all(|p| p.deformed));
        let again = balance_by_deformation(input, &params);
        prop_assert!(out == again);
    }

    #[test]
    fn validation_split_is_a_proper_partition(
        cases in prop::collection::vec(prop::array::uniform7(0u64..10_000), 2..8),
        frac in 0.05f64..0.5,
    ) {
        prop_assume!(cases.iter().all(|c| c.iter().sum::<u64>() > 0));
        let named: Vec<_> = cases.iter().enumerate().map(|(i, c)| (format!("c{i}"), *c)).collect();
        let val = assign_validation_cases(&named, frac).unwrap();
        prop_assert!(!val.is_empty());
        prop_assert!(val.len() < named.len());
        prop_assert!(val.iter().all(|id| named.iter().any(|(n, _)| n == id)));
    }
}

#[test]
fn balancing_tops_up_a_rare_class() {
    // Four patches of class 0 and one of class 1.
    let mk = |class: u8, i: i64| {
        let mut p = synthetic_patch(16, 0, "c");
        p.target = LabelRaster::new(16, 16, class);
        p.center = (i, 0);
        p
    };
    let input = vec![mk(0, 0), mk(0, 1), mk(0, 2), mk(0, 3), mk(1, 4)];
    let out = balance_by_deformation(
        input,
        &BalanceParams {
            k_max: 3,
            ..BalanceParams::default()
        },
    );
    let counts = patch_class_counts(&out);
    // 1 → 2 → 3 copies of class 1 until 3·256·10 ≥ 4·256·7 holds.
    assert_eq!(out.len(), 5 + 2);
    assert_eq!(counts[1], 3 * 256);
}

#[test]
fn split_keeps_cases_whole() {
    let mut patches = Vec::new();
    for case in 0..5 {
        for i in 0..4 {
            patches.push(synthetic_patch(16, case * 10 + i, &format!("case{case}")));
        }
    }
    let split = split_by_case(patches, 0.2).unwrap();
    let train_cases: BTreeSet<_> = split.train.iter().map(|p| p.case_id.clone()).collect();
    assert!(train_cases.is_disjoint(&split.val_cases));
    assert!(split
        .val
        .iter()
        .all(|p| split.val_cases.contains(&p.case_id)));
    assert_eq!(split.train.len() + split.val.len(), 20);
    assert_eq!(split.val_counts, patch_class_counts(&split.val));
    for f in split.val_fractions().into_iter().flatten() {
        assert!(f <= 0.3 + 1e-12, "{f}");
    }
}

#[test]
fn store_round_trips_and_indexes_by_class() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("round-0.ptch");
    let patches: Vec<_> = (0..6).map(|i| synthetic_patch(16, i, "c")).collect();
    {
        let mut store = PatchStore::open(&path, 16, 0).unwrap();
        store.append(&patches[..4]).unwrap();
        store.append(&patches[4..]).unwrap();
    }
    let store = PatchStore::open_existing(&path).unwrap();
    assert_eq!(store.len(), 6);
    assert!(store.read_all().unwrap() == patches);
    for c in 0..NUM_CLASSES {
        let want: Vec<_> = patches
            .iter()
            .filter(|p| p.class_counts()[c] > 0)
            .cloned()
            .collect();
        assert!(store.read_class(c).unwrap() == want, "class {c}");
    }
}
