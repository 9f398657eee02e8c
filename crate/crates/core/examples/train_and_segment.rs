//! Builds a first-round training set from simulated annotation on three
//! synthetic cases, trains the small network and segments a held-out
//! slide.
//!
//! cargo run --release -p dial-core --example train_and_segment -- [epochs]

use std::time::Instant;

use dial_core::dmmn::{miou, train_with_progress, DmmnConfig, DmmnModel, TrainConfig};
use dial_core::inference::segment_slide;
use dial_core::patch::{
    balance_by_deformation, compute_weights, extract_patches, patch_class_counts, split_by_case,
    BalanceParams,
};
use dial_core::synth::{
    generate_synthetic_case, simulate_initial_annotation, AnnotationParams, SyntheticCaseSpec,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs: usize = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(8);
    let model = DmmnModel::new(DmmnConfig::test_scale(1))?;
    let p = model.config().patch_size;

    let mut patches = Vec::new();
    for (i, ratio) in [0.2, 0.5, 0.8].into_iter().enumerate() {
        let case = generate_synthetic_case(
            &SyntheticCaseSpec::new(format!("case-{i}"), ratio, i as u64).with_size(1024, 1024),
        )?;
        for s in &case.slides {
            let ann = simulate_initial_annotation(s, &AnnotationParams::default());
            patches.extend(extract_patches(&s.pyramid, &ann, p, p)?);
        }
    }
    let before = patches.len();
    let patches = balance_by_deformation(patches, &BalanceParams::default());
    let counts = patch_class_counts(&patches);
    let weights = compute_weights(&counts)?;
    println!("{before} patches, {} after balancing", patches.len());
    println!("loss weights {:.3?}", weights.0);

    let split = split_by_case(patches, 0.2)?;
    println!(
        "validation cases {:?}: {} patches",
        split.val_cases,
        split.val.len()
    );
    let cfg = TrainConfig {
        epochs,
        batch_size: 1,
        ..TrainConfig::initial(weights)
    };
    let start = Instant::now();
    let (trained, history) = train_with_progress(&model, &split, &cfg, |r| {
        println!(
            "[{:>5.1}s] epoch {:2} loss {:.4} val mIOU {:.4}",
            start.elapsed().as_secs_f64(),
            r.epoch,
            r.train_loss,
            r.val_miou
        );
    })?;
    println!("kept epoch {}", history.best_epoch);

    let held_out = generate_synthetic_case(
        &SyntheticCaseSpec::new("held-out", 0.5, 99).with_size(1024, 1024),
    )?;
    let slide = &held_out.slides[0];
    let map = segment_slide(&trained, "example", &slide.pyramid, 1)?;
    let score = miou(map.data(), &slide.truth.to_raster())?;
    println!(
        "held-out slide mIOU {score:.4}, predicted counts {:?}",
        map.counts()
    );
    Ok(())
}
