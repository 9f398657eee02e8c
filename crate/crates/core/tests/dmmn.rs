use dial_core::dmmn::*;
use dial_core::patch::{compute_weights, LossWeights, PatchRecord};
use dial_core::{LabelRaster, RgbImage, UNLABELED};
use proptest::prelude::*;

mod common;
use common::{random_input, random_target};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Per-pixel oracle written independently of the library loss.
fn brute_force_loss(logits: &Tensor<f64>, target: &LabelRaster, w: &LossWeights) -> f64 {
    let (mut total, mut n) = (0.0, 0);
    for y in 0..logits.h {
        for x in 0..logits.w {
            let t = target.get(x, y);
            if t == UNLABELED {
                continue;
            }
            let denom: f64 = (0..logits.c).map(|c| logits.at(c, y, x).exp()).sum();
            let p = logits.at(t as usize, y, x).exp() / denom;
            total += -w.0[t as usize] * p.ln();
            n += 1;
        }
    }
    total / n as f64
}

#[test]
fn uniform_logits_give_ln7() {
    let logits = Tensor::<f64>::zeros(7, 4, 4);
    let target = random_target(4, 1, 1.0);
    let l = loss(&logits, &target, &LossWeights::uniform()).unwrap();
    assert!((l - 7f64.ln()).abs() < 1e-12);
    assert!((l - 1.945_910_149_055_313).abs() < 1e-12);
}

#[test]
fn single_zero_weight_pixel_gives_zero() {
    let logits = random_input(4, 3).x20;
    let mut logits7 = Tensor::<f64>::zeros(7, 4, 4);
    logits7.data[..48].copy_from_slice(&logits.data);
    let mut target = LabelRaster::unlabeled(4, 4);
    target.set(2, 1, 4);
    let mut w = LossWeights::uniform();
    w.0[4] = 0.0;
    assert_eq!(loss(&logits7, &target, &w).unwrap(), 0.0);
    assert!(loss(&logits7, &LabelRaster::unlabeled(4, 4), &w).is_err());
}

proptest! {
    #[test]
    fn loss_matches_brute_force(seed in 0u64..1000, scale in 0.1f64..8.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (rng.random_range(1..6), rng.random_range(1..6));
        let data = (0..7 * h * w).map(|_| rng.random_range(-scale..scale)).collect();
        let logits = Tensor::from_vec(7, h, w, data).unwrap();
        let mut t: Vec<u8> = (0..h * w).map(|_| if rng.random_bool(0.7) { rng.random_range(0..7) } else { UNLABELED }).collect();
        t[0] = rng.random_range(0..7);
        let target = LabelRaster::from_raw(w, h, t).unwrap();
        let counts: [u64; 7] = std::array::from_fn(|_| rng.random_range(0..50));
        let weights = compute_weights(&counts).unwrap_or(LossWeights::uniform());
        let got = loss(&logits, &target, &weights).unwrap();
        let want = brute_force_loss(&logits, &target, &weights);
        prop_assert!((got - want).abs() <= 1e-6 * want.abs().max(1.0));
        prop_assert!(got >= 0.0);
        let unweighted = loss(&logits, &target, &LossWeights::uniform()).unwrap();
        prop_assert!((unweighted - brute_force_loss(&logits, &target, &LossWeights::uniform())).abs() < 1e-9);

        let sm = softmax(&logits);
        for i in 0..h * w {
            let s: f64 = (0..7).map(|c| sm.data[c * h * w + i]).sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn miou_matches_set_oracle(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.random_range(2..8u8);
        let pred: Vec<u8> = (0..64).map(|_| rng.random_range(0..k)).collect();
        let mut tgt: Vec<u8> = (0..64).map(|_| if rng.random_bool(0.8) { rng.random_range(0..k) } else { UNLABELED }).collect();
        tgt[0] = 0;
        let (p, t) = (LabelRaster::from_raw(8, 8, pred.clone()).unwrap(), LabelRaster::from_raw(8, 8, tgt.clone()).unwrap());
        let labeled: Vec<usize> = (0..64).filter(|&i| tgt[i] != UNLABELED).collect();
        let mut ious = Vec::new();
        for c in 0..7u8 {
            let tset: std::collections::BTreeSet<usize> = labeled.iter().copied().filter(|&i| tgt[i] == c).collect();
            if tset.is_empty() { continue; }
            let pset: std::collections::BTreeSet<usize> = labeled.iter().copied().filter(|&i| pred[i] == c).collect();
            ious.push(tset.intersection(&pset).count() as f64 / tset.union(&pset).count() as f64);
        }
        let want = ious.iter().sum::<f64>() / ious.len() as f64;
        prop_assert!((miou(&p, &t).unwrap() - want).abs() < 1e-12);
    }
}

#[test]
fn gradient_check_tiny_network() {
    let net = Network::<f64>::new(DmmnConfig::tiny(7)).unwrap();
    let input = random_input(16, 11);
    let target = random_target(16, 12, 0.6);
    let weights = compute_weights(&[5, 1, 2, 8, 3, 1, 4]).unwrap();
    let opts = GradCheckOptions {
        n_params: 200,
        ..Default::default()
    };
    let report = grad_check_report(&net, &input, &target, &weights, &opts).unwrap();
    assert_eq!(report.checked, 200);
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn gradient_check_catches_a_corrupted_gradient() {
    let net = Network::<f64>::new(DmmnConfig::tiny(7)).unwrap();
    let input = random_input(16, 11);
    let target = random_target(16, 12, 0.6);
    let weights = LossWeights::uniform();
    let (_, mut g) = net.loss_and_gradient(&input, &target, &weights).unwrap();
    for v in g.iter_mut().step_by(3) {
        *v *= 1.1;
    }
    let opts = GradCheckOptions::default();
    let report = grad_check_against(&net, &input, &target, &weights, &g, &opts).unwrap();
    assert!(
        report.max_rel_error > 1e-2,
        "corruption went unnoticed: {report:?}"
    );
}

#[test]
fn zero_weight_loss_has_zero_gradient() {
    let net = Network::<f64>::new(DmmnConfig::tiny(2)).unwrap();
    let input = random_input(16, 1);
    let target = random_target(16, 2, 0.5);
    let w = LossWeights([0.0; 7]);
    let (l, g) = net.loss_and_gradient(&input, &target, &w).unwrap();
    assert_eq!(l, 0.0);
    assert!(g.iter().all(|&v| v == 0.0));
    assert_eq!(
        grad_check(&net, &input, &target, &w, &GradCheckOptions::default()).unwrap(),
        0.0
    );
}

fn record(p: usize, seed: u64) -> PatchRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = || {
        let raw = (0..p * p * 3).map(|_| rng.random::<u8>()).collect();
        RgbImage::from_raw(p, p, raw).unwrap()
    };
    PatchRecord {
        slide_id: "s".into(),
        case_id: "c".into(),
        center: (0, 0),
        img20: img(),
        img10: img(),
        img5: img(),
        target: random_target(p, seed + 1, 0.5),
        round: 0,
        deformed: false,
    }
}

fn mirror(img: &RgbImage) -> RgbImage {
    let (w, h) = img.dims();
    let mut out = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            out.put_pixel(w - 1 - x, y, img.pixel(x, y));
        }
    }
    out
}

#[test]
fn flipped_pair_gives_the_same_loss() {
    let net = Network::<f32>::new(DmmnConfig::tiny(5)).unwrap();
    let rec = record(16, 9);
    let w = LossWeights::uniform();
    let flip = Augmentation {
        geometry: Geometry {
            hflip: true,
            ..Default::default()
        },
        ..Augmentation::identity()
    };
    let (aug_in, aug_t) = flip.apply(&rec);

    // Flip the raw record by hand and run it through the plain pipeline.
    let mut manual = rec.clone();
    manual.img20 = mirror(&rec.img20);
    manual.img10 = mirror(&rec.img10);
    manual.img5 = mirror(&rec.img5);
    for y in 0..16 {
        for x in 0..16 {
            manual.target.set(15 - x, y, rec.target.get(x, y));
        }
    }
    let (man_in, man_t) = Augmentation::identity().apply(&manual);
    assert_eq!(aug_t, man_t);
    let a = loss(&net.forward(&aug_in).unwrap(), &aug_t, &w).unwrap();
    let b = loss(&net.forward(&man_in).unwrap(), &man_t, &w).unwrap();
    assert_eq!(a, b);

    // Flipping the output together with the target leaves the loss alone.
    let (plain_in, plain_t) = Augmentation::identity().apply(&rec);
    let out = net.forward(&plain_in).unwrap();
    let before = loss(&out, &plain_t, &w).unwrap();
    let after = loss(&flip.geometry.apply_tensor(&out), &aug_t, &w).unwrap();
    assert!((before - after).abs() < 1e-9);
}
