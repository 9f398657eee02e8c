#![allow(dead_code)]

use dial_core::dmmn::{PatchInput, Tensor};
use dial_core::{LabelRaster, UNLABELED};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_input(p: usize, seed: u64) -> PatchInput<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = || {
        let data = (0..3 * p * p).map(|_| rng.random_range(0.0..1.0)).collect();
        Tensor::from_vec(3, p, p, data).unwrap()
    };
    PatchInput {
        x20: t(),
        x10: t(),
        x5: t(),
    }
}

pub fn random_target(p: usize, seed: u64, labeled: f64) -> LabelRaster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..p * p)
        .map(|_| {
            if rng.random_bool(labeled) {
                rng.random_range(0..7)
            } else {
                UNLABELED
            }
        })
        .collect();
    LabelRaster::from_raw(p, p, data).unwrap()
}
