use std::fs;

use super::state::{
    CorrectionPolicy, CorrectionSet, DataPart, ModelEntry, RoundState, RoundStatus,
};
use super::workspace::Workspace;
use crate::class::{ClassCounts, NUM_CLASSES, UNLABELED};
use crate::dmmn::{train_with_progress, Checkpoint, DmmnModel, TrainConfig};
use crate::error::{DialError, Result};
use crate::inference::{segment_slide, SegmentationMap};
use crate::mask::{class_pixel_counts, LabelMask};
use crate::patch::{
    balance_by_deformation, compute_weights, elastic_deform, extract_patches, patch_class_counts,
    split_by_case, PatchRecord, PatchStore,
};
use crate::seed::SeedBuilder;
use crate::wsi::WsiPyramid;

/// Progress sink: overall fraction in `[0, 1]` and a short message.
pub type Progress<'a> = dyn FnMut(f64, &str) + 'a;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FinetuneOptions {
    /// Model to finetune; defaults to the active one.
    pub parent: Option<String>,
    pub tag: Option<String>,
}

fn add_counts(into: &mut ClassCounts, from: &ClassCounts) {
    for (a, b) in into.iter_mut().zip(from) {
        *a += b;
    }
}

fn write_store(
    ws: &Workspace,
    round: usize,
    deformed: bool,
    patches: &[PatchRecord],
) -> Result<()> {
    let path = ws.patch_path(round, deformed);
    for p in [path.clone(), {
        let mut s = path.as_os_str().to_os_string();
        s.push(".index.json");
        s.into()
    }] {
        if p.exists() {
            fs::remove_file(&p).map_err(|e| DialError::io(&p, e))?;
        }
    }
    let mut store = PatchStore::open(&path, ws.config().model.patch_size, round as i32)?;
    store.append(patches)
}

fn read_store(ws: &Workspace, round: usize, deformed: bool) -> Result<Option<Vec<PatchRecord>>> {
    let path = ws.patch_path(round, deformed);
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(PatchStore::open_existing(&path)?.read_all()?))
}

fn train_seed(ws: &Workspace, tag: &str) -> u64 {
    SeedBuilder::new("train")
        .u64(ws.config().seed)
        .str(tag)
        .finish()
}

/// Segments every training slide and stores the maps under the model tag.
pub fn segment_training_slides(
    ws: &Workspace,
    slides: &[WsiPyramid],
    model: &DmmnModel,
    tag: &str,
    hash: &str,
) -> Result<Vec<SegmentationMap>> {
    slides
        .iter()
        .map(|s| {
            let map = segment_slide(model, hash, s, ws.config().workers)?;
            map.save(&ws.prediction_path(tag, &s.slide_id))?;
            Ok(map)
        })
        .collect()
}

/// Loads a registered model's checkpoint and checks it against the hash in
/// the round state.
pub fn load_model(ws: &Workspace, state: &RoundState, tag: &str) -> Result<(Checkpoint, String)> {
    let entry = state.require_model(tag)?;
    let (ckpt, hash) = Checkpoint::load(&ws.checkpoint_path(tag))?;
    if hash != entry.hash {
        return Err(DialError::Format(format!(
            "checkpoint {tag} hashes to {hash}, round state records {}",
            entry.hash
        )));
    }
    Ok((ckpt, hash))
}

struct Trained {
    hash: String,
    history: crate::dmmn::TrainHistory,
    train_patches: usize,
    val_patches: usize,
    val_cases: Vec<String>,
}

#[allow(clippy::too_many_arguments)]
fn train_and_store(
    ws: &Workspace,
    slides: &[WsiPyramid],
    start: &DmmnModel,
    patches: Vec<PatchRecord>,
    cfg: &TrainConfig,
    tag: &str,
    parent_hash: Option<String>,
    progress: &mut Progress,
) -> Result<Trained> {
    let split = split_by_case(patches, ws.config().val_fraction)?;
    let (train_patches, val_patches) = (split.train.len(), split.val.len());
    let val_cases = split.val_cases.iter().cloned().collect();
    progress(0.0, &format!("training {tag} on {train_patches} patches"));
    let epochs = cfg.epochs as f64;
    let (model, history) = train_with_progress(start, &split, cfg, |r| {
        progress(
            0.9 * r.epoch as f64 / epochs,
            &format!(
                "epoch {} loss {:.4} val mIOU {:.4}",
                r.epoch, r.train_loss, r.val_miou
            ),
        );
    })?;
    drop(split);
    let hash = Checkpoint::new(model.clone(), tag, parent_hash).save(&ws.checkpoint_path(tag))?;
    progress(0.9, &format!("segmenting training slides with {tag}"));
    segment_training_slides(ws, slides, &model, tag, &hash)?;
    progress(1.0, &format!("{tag} done"));
    Ok(Trained {
        hash,
        history,
        train_patches,
        val_patches,
        val_cases,
    })
}

/// Extract, balance, weight, split and train the first model from the
/// round-0 annotation, then segment the training slides with it.
pub fn run_initial_round(
    ws: &Workspace,
    state: RoundState,
    progress: &mut Progress,
) -> Result<RoundState> {
    state.check_status(RoundStatus::AwaitingTraining, "train")?;
    let cfg = ws.config();
    let slides = ws.train_slides()?;
    let mut masks = Vec::with_capacity(slides.len());
    for s in &slides {
        let p = ws.mask_path(&s.slide_id, 0);
        if p.exists() {
            masks.push(LabelMask::load(&p, s.slide_id.clone())?);
        }
    }
    if class_pixel_counts(&masks).iter().sum::<u64>() == 0 {
        return Err(DialError::RoundState(
            "the initial annotation is empty".into(),
        ));
    }
    progress(0.0, "extracting patches");
    let mut patches = Vec::new();
    for m in &masks {
        let slide = slides
            .iter()
            .find(|s| s.slide_id == m.slide_id)
            .expect("mask of a training slide");
        patches.extend(extract_patches(slide, m, cfg.model.patch_size, cfg.stride)?);
    }
    if patches.is_empty() {
        return Err(DialError::RoundState(
            "no patch passes the labeled-pixel threshold".into(),
        ));
    }
    let patches = balance_by_deformation(patches, &cfg.balance);
    write_store(ws, 0, false, &patches)?;
    let counts = patch_class_counts(&patches);
    let weights = compute_weights(&counts)?;

    let tag = "Model1";
    let model = DmmnModel::new(cfg.model)?;
    let mut tcfg = cfg.initial.clone();
    tcfg.loss_weights = weights;
    tcfg.seed = train_seed(ws, tag);
    let round_patches = patches.len();
    let trained = train_and_store(ws, &slides, &model, patches, &tcfg, tag, None, progress)?;

    let mut state = state;
    state.models.push(ModelEntry {
        tag: tag.into(),
        hash: trained.hash.clone(),
        parent: None,
        parent_hash: None,
        round: 0,
        policy: None,
        learning_rate: tcfg.learning_rate,
        epochs: tcfg.epochs,
        composition: vec![DataPart {
            round: 0,
            policy: None,
        }],
        round_patches,
        round_counts: counts,
        cumulative_counts: counts,
        weights,
        train_patches: trained.train_patches,
        val_patches: trained.val_patches,
        val_cases: trained.val_cases,
        history: trained.history,
        lineage: vec![trained.hash.clone()],
    });
    state.lineage = vec![trained.hash];
    state.active = Some(tag.into());
    state.round_index = 0;
    state.status = RoundStatus::AwaitingCorrection;
    ws.save_state(&state)?;
    Ok(state)
}

/// Records the correction masks of the next round. An empty set together
/// with `satisfy` ends the loop instead.
pub fn submit_corrections(
    ws: &Workspace,
    state: RoundState,
    masks: Vec<LabelMask>,
    satisfy: bool,
) -> Result<RoundState> {
    state.check_status(RoundStatus::AwaitingCorrection, "submit corrections")?;
    let k = state.next_correction_round();
    if state.pending.is_some() || state.correction(k).is_some() {
        return Err(DialError::RoundState(format!(
            "corrections for round {k} were already submitted"
        )));
    }
    let labeled: u64 = masks.iter().map(LabelMask::labeled_count).sum();
    let mut state = state;
    if labeled == 0 {
        if !satisfy {
            return Err(DialError::RoundState(
                "empty correction set; use satisfy to finish".into(),
            ));
        }
        state.status = RoundStatus::Satisfied;
        ws.save_state(&state)?;
        return Ok(state);
    }
    if satisfy {
        return Err(DialError::RoundState(
            "cannot satisfy while submitting corrections".into(),
        ));
    }
    let mut slides = Vec::new();
    for m in &masks {
        if m.round != k as i32 {
            return Err(DialError::RoundState(format!(
                "mask for {} has round {}, expected {k}",
                m.slide_id, m.round
            )));
        }
        ws.check_training_mask(m)?;
        if slides.contains(&m.slide_id) {
            return Err(DialError::RoundState(format!(
                "two masks for {}",
                m.slide_id
            )));
        }
        slides.push(m.slide_id.clone());
    }
    for m in masks.iter().filter(|m| !m.is_empty()) {
        m.save(&ws.mask_path(&m.slide_id, k))?;
    }
    state.corrections.push(CorrectionSet {
        round: k,
        slides: masks
            .iter()
            .filter(|m| !m.is_empty())
            .map(|m| m.slide_id.clone())
            .collect(),
        counts: class_pixel_counts(&masks),
    });
    state.pending = Some(k);
    ws.save_state(&state)?;
    Ok(state)
}

pub fn satisfy(ws: &Workspace, state: RoundState) -> Result<RoundState> {
    submit_corrections(ws, state, Vec::new(), true)
}

/// Patches centered on round-`k` corrections. Positions follow the 1% rule
/// on the round-`k` mask alone; targets come from the annotation merged
/// through round `k`.
pub fn correction_patches(
    ws: &Workspace,
    slides: &[WsiPyramid],
    k: usize,
) -> Result<Vec<PatchRecord>> {
    let p = ws.config().model.patch_size;
    let half = p as i64 / 2;
    let mut out = Vec::new();
    for s in slides {
        let path = ws.mask_path(&s.slide_id, k);
        if !path.exists() {
            continue;
        }
        let round_mask = LabelMask::load(&path, s.slide_id.clone())?;
        let merged = ws.merged_mask(&s.slide_id, k)?.to_raster();
        for mut patch in extract_patches(s, &round_mask, p, ws.config().stride)? {
            let (x0, y0) = (patch.center.0 - half, patch.center.1 - half);
            patch.target = merged.crop_padded(x0, y0, p, p, UNLABELED);
            out.push(patch);
        }
    }
    Ok(out)
}

/// One elastically deformed copy of every patch.
pub fn deformed_copies(ws: &Workspace, patches: &[PatchRecord]) -> Vec<PatchRecord> {
    let cfg = ws.config();
    patches
        .iter()
        .map(|p| {
            let seed = p.seed(cfg.seed).str("double").finish();
            elastic_deform(p, seed, &cfg.double_deform)
        })
        .collect()
}

fn part_patches(ws: &Workspace, slides: &[WsiPyramid], part: DataPart) -> Result<Vec<PatchRecord>> {
    if part.round == 0 {
        return read_store(ws, 0, false)?
            .ok_or_else(|| DialError::Format("round-0 patch store is missing".into()));
    }
    let originals = match read_store(ws, part.round, false)? {
        Some(p) => p,
        None => {
            let p = correction_patches(ws, slides, part.round)?;
            write_store(ws, part.round, false, &p)?;
            p
        }
    };
    if part.policy != Some(CorrectionPolicy::Double) {
        return Ok(originals);
    }
    let deformed = match read_store(ws, part.round, true)? {
        Some(d) => d,
        None => {
            let d = deformed_copies(ws, &originals);
            write_store(ws, part.round, true, &d)?;
            d
        }
    };
    let mut all = originals;
    all.extend(deformed);
    Ok(all)
}

/// Training set of the correction round `k` alone under `policy`.
pub fn round_training_patches(
    ws: &Workspace,
    slides: &[WsiPyramid],
    k: usize,
    policy: CorrectionPolicy,
) -> Result<Vec<PatchRecord>> {
    part_patches(
        ws,
        slides,
        DataPart {
            round: k,
            policy: Some(policy),
        },
    )
}

/// Finetunes a model on everything it was trained on plus the newest
/// corrections.
///
/// With corrections pending for round `k`, the parent defaults to the
/// active model. Without pending corrections, naming a parent from round
/// `k-1` trains a sibling of the current round's model on the same
/// corrections (how the single and double variants share one round).
pub fn finetune_round(
    ws: &Workspace,
    state: RoundState,
    policy: CorrectionPolicy,
    opts: &FinetuneOptions,
    progress: &mut Progress,
) -> Result<RoundState> {
    state.check_status(RoundStatus::AwaitingCorrection, "finetune")?;
    let (k, parent_tag) = match (state.pending, &opts.parent) {
        (Some(k), parent) => {
            let p = parent
                .clone()
                .or_else(|| state.active.clone())
                .expect("a trained model");
            (k, p)
        }
        (None, Some(p)) if state.round_index >= 1 => (state.round_index, p.clone()),
        _ => {
            return Err(DialError::RoundState(format!(
                "no corrections submitted for round {}; use satisfy to finish",
                state.next_correction_round()
            )))
        }
    };
    let parent = state.require_model(&parent_tag)?.clone();
    if parent.round + 1 != k {
        return Err(DialError::RoundState(format!(
            "{parent_tag} was trained in round {}, so it cannot take round-{k} corrections",
            parent.round
        )));
    }
    if state.correction(k).is_none() {
        return Err(DialError::RoundState(format!(
            "round {k} has no corrections"
        )));
    }
    let tag = match &opts.tag {
        Some(t) if state.model(t).is_some() => {
            return Err(DialError::RoundState(format!("model tag {t} is taken")))
        }
        Some(t) => t.clone(),
        None => state.fresh_tag(k),
    };
    let (parent_ckpt, parent_hash) = load_model(ws, &state, &parent_tag)?;

    progress(0.0, "collecting patches");
    let slides = ws.train_slides()?;
    let mut composition = parent.composition.clone();
    composition.push(DataPart {
        round: k,
        policy: Some(policy),
    });
    let mut patches = Vec::new();
    let mut round_counts = [0u64; NUM_CLASSES];
    let mut round_patches = 0;
    for &part in &composition {
        let p = part_patches(ws, &slides, part)?;
        if part.round == k {
            round_counts = patch_class_counts(&p);
            round_patches = p.len();
        }
        patches.extend(p);
    }
    let mut cumulative = parent.cumulative_counts;
    add_counts(&mut cumulative, &round_counts);
    debug_assert_eq!(cumulative, patch_class_counts(&patches));
    let weights = compute_weights(&cumulative)?;

    let mut tcfg = ws.config().finetune.clone();
    tcfg.loss_weights = weights;
    tcfg.seed = train_seed(ws, &tag);
    let trained = train_and_store(
        ws,
        &slides,
        &parent_ckpt.model,
        patches,
        &tcfg,
        &tag,
        Some(parent_hash.clone()),
        progress,
    )?;
    let mut lineage = parent.lineage.clone();
    lineage.push(trained.hash.clone());

    let mut state = state;
    state.models.push(ModelEntry {
        tag: tag.clone(),
        hash: trained.hash,
        parent: Some(parent_tag),
        parent_hash: Some(parent_hash),
        round: k,
        policy: Some(policy),
        learning_rate: tcfg.learning_rate,
        epochs: tcfg.epochs,
        composition,
        round_patches,
        round_counts,
        cumulative_counts: cumulative,
        weights,
        train_patches: trained.train_patches,
        val_patches: trained.val_patches,
        val_cases: trained.val_cases,
        history: trained.history,
        lineage: lineage.clone(),
    });
    state.lineage = lineage;
    state.active = Some(tag);
    state.round_index = k;
    state.pending = None;
    ws.save_state(&state)?;
    Ok(state)
}

/// Scripted corrections for the next round from the active model's
/// predictions and the stored ground truth.
pub fn oracle_round(
    ws: &Workspace,
    state: &RoundState,
    budget_pixels: u64,
) -> Result<Vec<LabelMask>> {
    let active = state
        .active
        .as_deref()
        .ok_or_else(|| DialError::RoundState("no model has been trained yet".into()))?;
    let mut preds = Vec::new();
    let mut truth = Vec::new();
    for s in &ws.corpus().train {
        preds.push(ws.load_prediction(active, &s.slide_id)?);
        truth.push(ws.load_truth(&s.slide_id)?);
    }
    super::oracle::oracle_correct(&preds, &truth, state.next_correction_round(), budget_pixels)
}
