//! Generates one synthetic case, simulates the sparse first-round
//! annotation and writes 5× overlays of both next to the slide tiles.
//!
//! cargo run --release -p dial-core --example synthetic_case -- [ratio] [seed] [outdir]

use dial_core::inference::overlay;
use dial_core::synth::{
    generate_synthetic_case, simulate_initial_annotation, AnnotationParams, SyntheticCaseSpec,
};
use dial_core::wsi::save_slide;
use dial_core::{ClassId, Palette};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let ratio: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0.4);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(7);
    let out = std::path::PathBuf::from(args.next().unwrap_or_else(|| "synthetic-case".into()));

    let spec = SyntheticCaseSpec::new("case-00", ratio, seed)
        .with_size(2048, 2048)
        .with_slides(2);
    let case = generate_synthetic_case(&spec)?;
    println!(
        "case {} target ratio {ratio:.3} achieved {:.3}",
        case.case_id, case.achieved_ratio
    );

    let palette = Palette::default();
    for s in &case.slides {
        let id = &s.pyramid.slide_id;
        let dir = out.join(id);
        save_slide(&s.pyramid, &dir, None)?;
        let ann = simulate_initial_annotation(
            s,
            &AnnotationParams {
                seed,
                ..AnnotationParams::default()
            },
        );
        let truth = s.truth.to_raster();
        std::fs::write(
            dir.join("truth.png"),
            overlay(&s.pyramid, &truth, &palette, 0.6, 2)?.encode_png()?,
        )?;
        std::fs::write(
            dir.join("annotation.png"),
            overlay(&s.pyramid, &ann.to_raster(), &palette, 0.8, 2)?.encode_png()?,
        )?;
        ann.save(&dir.join("round-0.mask"))?;

        let counts = s.truth.class_counts();
        let total: u64 = counts.iter().sum();
        println!("\n{id}: {} of {total} px annotated", ann.labeled_count());
        for c in ClassId::ALL {
            println!(
                "  {:>22} {:6.2}%",
                c.name(),
                100.0 * counts[c.index()] as f64 / total as f64
            );
        }
        let hard = s.challenging.iter().filter(|&&c| c).count();
        println!("  {hard} px are challenging variants the annotation skips");
    }
    println!("\nwrote {}", out.display());
    Ok(())
}
