//! The command sequence from the README, end to end on a small workspace.

use std::path::Path;

use clap::Parser;
use dial_core::dial::{RoundStatus, Workspace};
use dial_core::inference::SegmentationMap;
use dial_service::cli::{run, Cli};

fn dial(ws: &Path, args: &[&str]) {
    let mut argv = vec!["dial".to_string(), "-w".into(), ws.display().to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    let cli = Cli::try_parse_from(&argv).unwrap();
    if let Err(e) = run(cli) {
        panic!("dial {}: {e}", args.join(" "));
    }
}

fn dial_fails(ws: &Path, args: &[&str]) {
    let mut argv = vec!["dial".to_string(), "-w".into(), ws.display().to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    // Either clap or the command itself refuses.
    let failed = Cli::try_parse_from(&argv).map_or(true, |cli| run(cli).is_err());
    assert!(failed, "dial {} should fail", args.join(" "));
}

/// Swaps in the 16-pixel network and one epoch per stage.
fn shrink(ws: &Path) {
    let path = ws.join("workspace.json");
    let mut v: serde_json::Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    let cfg = &mut v["config"];
    cfg["model"]["patch_size"] = 16.into();
    cfg["model"]["base_channels"] = 2.into();
    cfg["stride"] = 16.into();
    cfg["initial"]["epochs"] = 1.into();
    cfg["finetune"]["epochs"] = 1.into();
    std::fs::write(&path, serde_json::to_vec_pretty(&v).unwrap()).unwrap();
}

#[test]
fn readme_sequence_runs() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().join("ws");
    let corr = dir.path().join("corr");
    dial(
        &ws,
        &["init", "--seed", "2", "--train-cases", "2", "--test-cases", "2", "--slide-size", "1024"],
    );
    dial_fails(&ws, &["init"]);
    shrink(&ws);
    dial_fails(&ws, &["finetune", "--weighting", "double"]);
    dial(&ws, &["train"]);
    dial(&ws, &["status"]);
    dial(&ws, &["oracle", "--budget", "30000", "--out", corr.to_str().unwrap()]);
    dial(&ws, &["correct", "--from", corr.to_str().unwrap()]);
    dial_fails(&ws, &["correct", "--from", corr.to_str().unwrap()]);
    dial(&ws, &["finetune", "--weighting", "single", "--tag", "Model2a"]);
    dial(&ws, &["finetune", "--weighting", "double", "--parent", "Model1", "--tag", "Model2b"]);
    dial_fails(&ws, &["finetune", "--weighting", "bogus", "--parent", "Model1"]);
    dial(&ws, &["satisfy"]);
    dial(&ws, &["assess"]);

    let w = Workspace::open(&ws).unwrap();
    let state = w.load_state().unwrap();
    assert_eq!(state.status, RoundStatus::Satisfied);
    let tags: Vec<_> = state.models.iter().map(|m| m.tag.as_str()).collect();
    assert_eq!(tags, ["Model1", "Model2a", "Model2b"]);
    let cmp: serde_json::Value =
        serde_json::from_slice(&std::fs::read(ws.join("reports/comparison.json")).unwrap()).unwrap();
    assert_eq!(cmp["rows"].as_array().unwrap().len(), 3);
    for tag in &tags {
        assert!(ws.join("reports").join(tag).join("report.md").exists());
    }

    let slide = &w.corpus().test[0].slide_id;
    let out = dir.path().join("pred.mask");
    dial(
        &ws,
        &[
            "segment",
            "--checkpoint",
            w.checkpoint_path("Model2b").to_str().unwrap(),
            "--slide",
            w.slide_dir(slide).to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
    );
    let map = SegmentationMap::load(&out).unwrap();
    assert_eq!(&map.slide_id, slide);
    assert_eq!(map.model_hash, state.model("Model2b").unwrap().hash);
}
