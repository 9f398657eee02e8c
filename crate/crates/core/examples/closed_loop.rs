//! Runs the four-model interactive loop on a generated corpus and prints
//! the error rate of each model.
//!
//! cargo run --release -p dial-core --example closed_loop -- [seed] [workdir]

use std::time::Instant;

use dial_core::dial::{run_experiment, ExperimentConfig, LoopVerdict};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1);
    let dir = match args.next() {
        Some(d) => std::path::PathBuf::from(d),
        None => std::env::temp_dir().join(format!("dial-loop-{seed}")),
    };
    if dir.exists() {
        std::fs::remove_dir_all(&dir)?;
    }
    let cfg = ExperimentConfig::test_scale(seed);
    let start = Instant::now();
    let report = run_experiment(&dir, &cfg, &mut |f, msg| {
        println!(
            "[{:>6.1}s {:>5.1}%] {msg}",
            start.elapsed().as_secs_f64(),
            100.0 * f
        );
    })?;
    println!("\n{}", report.comparison.to_markdown());
    for m in &report.state.models {
        println!(
            "{:8} round {} patches {:5} (+{:4} this round) best epoch {:2} val mIOU {:.3}",
            m.tag,
            m.round,
            m.train_patches + m.val_patches,
            m.round_patches,
            m.history.best_epoch,
            m.history.best().map_or(0.0, |e| e.val_miou),
        );
    }
    let v = LoopVerdict::of(&report);
    println!(
        "\ndouble helps: {}  no worse than Model1: {}",
        v.double_helps, v.no_worse_than_model1
    );
    println!("artifacts in {}", dir.display());
    Ok(())
}
