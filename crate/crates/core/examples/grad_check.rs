//! Compares backpropagation with central differences on the tiny network,
//! then shows that a deliberately wrong gradient is caught.
//!
//! cargo run --release -p dial-core --example grad_check

use dial_core::dmmn::{
    grad_check_against, grad_check_report, DmmnConfig, GradCheckOptions, Network, PatchInput,
};
use dial_core::patch::{LossWeights, PatchRecord};
use dial_core::{LabelRaster, RgbImage, UNLABELED};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = DmmnConfig::tiny(3);
    let s = cfg.patch_size;
    let net: Network<f64> = Network::new(cfg)?;

    let mut img = RgbImage::new(s, s);
    let mut target = LabelRaster::unlabeled(s, s);
    for y in 0..s {
        for x in 0..s {
            img.put_pixel(x, y, [(x * 16) as u8, (y * 16) as u8, ((x + y) * 8) as u8]);
            let c = ((x / 4 + y / 4) % 8) as u8;
            target.set(x, y, if c < 7 { c } else { UNLABELED });
        }
    }
    let record = PatchRecord {
        slide_id: "s".into(),
        case_id: "c".into(),
        center: (s as i64 / 2, s as i64 / 2),
        img20: img.clone(),
        img10: img.clone(),
        img5: img,
        target: target.clone(),
        round: 0,
        deformed: false,
    };
    let input = PatchInput::<f64>::from_record(&record);
    let weights = LossWeights([0.9, 0.8, 0.85, 0.95, 0.7, 0.9, 0.91]);
    let opts = GradCheckOptions {
        n_params: 150,
        ..GradCheckOptions::default()
    };

    println!("{} parameters", net.params().len());
    let r = grad_check_report(&net, &input, &target, &weights, &opts)?;
    println!(
        "backprop: max rel error {:.2e} over {} parameters ({} skipped at kinks)",
        r.max_rel_error, r.checked, r.skipped_kinks
    );

    let (_, mut grad) = net.loss_and_gradient(&input, &target, &weights)?;
    for g in grad.iter_mut().step_by(2) {
        *g *= 1.05;
    }
    let bad = grad_check_against(&net, &input, &target, &weights, &grad, &opts)?;
    println!("mutated:  max rel error {:.2e}", bad.max_rel_error);
    Ok(())
}
