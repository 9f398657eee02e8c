//! On-disk layout of a workbench corpus and its round artifacts.
//!
//! ```text
//! root/
//!   workspace.json            config + corpus manifest
//!   state.json                RoundState
//!   slides/<slide_id>/        tiled pyramid
//!   masks/<slide_id>/round-<k>.mask
//!   truth/<slide_id>.mask     optional full ground truth
//!   refs.csv                  optional case_id,R_PATH
//!   patches/round-<k>.ptch    extracted patches, plus round-<k>-deformed.ptch
//!   checkpoints/<tag>.ckpt
//!   predictions/<tag>/<slide_id>.mask
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::state::RoundState;
use crate::assess::{load_refs, write_refs, EvalCase};
use crate::dmmn::{DmmnConfig, TrainConfig};
use crate::error::{DialError, Result};
use crate::inference::SegmentationMap;
use crate::mask::{merge_masks, LabelMask};
use crate::patch::{BalanceParams, DeformParams, LossWeights};
use crate::wsi::{load_slide, save_slide, WsiPyramid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DialConfig {
    pub model: DmmnConfig,
    /// Loss weights in here are replaced by the round's computed weights.
    pub initial: TrainConfig,
    pub finetune: TrainConfig,
    pub stride: usize,
    pub val_fraction: f64,
    pub balance: BalanceParams,
    /// Deformation used for the copies of double-weighted corrections.
    pub double_deform: DeformParams,
    pub seed: u64,
    pub workers: usize,
}

impl DialConfig {
    pub fn new(model: DmmnConfig, seed: u64) -> Self {
        let mut initial = TrainConfig::initial(LossWeights::uniform());
        let mut finetune = TrainConfig::finetune(LossWeights::uniform());
        initial.seed = seed;
        finetune.seed = seed;
        DialConfig {
            model,
            initial,
            finetune,
            stride: model.patch_size,
            val_fraction: 0.2,
            balance: BalanceParams {
                seed,
                ..BalanceParams::default()
            },
            double_deform: DeformParams::default(),
            seed,
            workers: 1,
        }
    }

    /// Small network, one patch per step. With momentum 0.99 and the small
    /// fixed learning rates, batches of 8 barely move in 30 epochs at this scale.
    pub fn test_scale(seed: u64) -> Self {
        let mut c = DialConfig::new(DmmnConfig::test_scale(seed), seed);
        c.initial.batch_size = 1;
        c.finetune.batch_size = 1;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.initial.validate()?;
        self.finetune.validate()?;
        if self.stride == 0 {
            return Err(DialError::InvalidConfig("stride must be positive".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(DialError::InvalidConfig(
                "val_fraction must lie in (0, 1)".into(),
            ));
        }
        if self.workers == 0 {
            return Err(DialError::InvalidConfig(
                "workers must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlideRef {
    pub slide_id: String,
    pub case_id: String,
}

impl SlideRef {
    fn of(slide: &WsiPyramid) -> Self {
        SlideRef {
            slide_id: slide.slide_id.clone(),
            case_id: slide.case_id.clone(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub train: Vec<SlideRef>,
    pub test: Vec<SlideRef>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct WorkspaceFile {
    config: DialConfig,
    corpus: CorpusManifest,
}

/// Everything needed to create a workspace.
#[derive(Clone, Debug, Default)]
pub struct NewCorpus {
    pub train: Vec<WsiPyramid>,
    /// Round-0 annotation, one per training slide.
    pub initial_masks: Vec<LabelMask>,
    pub test: Vec<WsiPyramid>,
    pub truth: Vec<LabelMask>,
    pub refs: BTreeMap<String, f64>,
}

#[derive(Clone, Debug)]
pub struct Workspace {
    root: PathBuf,
    config: DialConfig,
    corpus: CorpusManifest,
}

/// Write to a temporary sibling, then rename over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| DialError::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_os_string();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| DialError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| DialError::io(path, e))
}

fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id != "."
        && id != ".."
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
    if !ok {
        return Err(DialError::InvalidConfig(format!(
            "`{id}` is not a valid identifier"
        )));
    }
    Ok(())
}

impl Workspace {
    pub fn create(
        root: impl Into<PathBuf>,
        config: DialConfig,
        corpus: &NewCorpus,
    ) -> Result<Workspace> {
        let root = root.into();
        config.validate()?;
        if root.join("workspace.json").exists() {
            return Err(DialError::InvalidConfig(format!(
                "{} already holds a workspace",
                root.display()
            )));
        }
        if corpus.train.is_empty() {
            return Err(DialError::InvalidConfig(
                "corpus has no training slides".into(),
            ));
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in corpus.train.iter().chain(&corpus.test) {
            check_id(&s.slide_id)?;
            if !seen.insert(s.slide_id.clone()) {
                return Err(DialError::InvalidConfig(format!(
                    "duplicate slide id {}",
                    s.slide_id
                )));
            }
        }
        let manifest = CorpusManifest {
            train: corpus.train.iter().map(SlideRef::of).collect(),
            test: corpus.test.iter().map(SlideRef::of).collect(),
        };
        let ws = Workspace {
            root,
            config,
            corpus: manifest,
        };
        for s in corpus.train.iter().chain(&corpus.test) {
            save_slide(s, &ws.slide_dir(&s.slide_id), None)?;
        }
        for m in &corpus.initial_masks {
            if m.round != 0 {
                return Err(DialError::InvalidConfig(format!(
                    "initial mask for {} has round {}",
                    m.slide_id, m.round
                )));
            }
            ws.check_training_mask(m)?;
            m.save(&ws.mask_path(&m.slide_id, 0))?;
        }
        for t in &corpus.truth {
            t.save(&ws.truth_path(&t.slide_id))?;
        }
        if !corpus.refs.is_empty() {
            write_refs(&ws.root.join("refs.csv"), &corpus.refs)?;
        }
        let file = WorkspaceFile {
            config: ws.config.clone(),
            corpus: ws.corpus.clone(),
        };
        write_atomic(
            &ws.root.join("workspace.json"),
            &serde_json::to_vec_pretty(&file)?,
        )?;
        ws.save_state(&RoundState::default())?;
        Ok(ws)
    }

    pub fn open(root: impl Into<PathBuf>) -> Result<Workspace> {
        let root = root.into();
        let path = root.join("workspace.json");
        let bytes = fs::read(&path).map_err(|e| DialError::io(&path, e))?;
        let file: WorkspaceFile = serde_json::from_slice(&bytes)?;
        file.config.validate()?;
        Ok(Workspace {
            root,
            config: file.config,
            corpus: file.corpus,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &DialConfig {
        &self.config
    }

    pub fn corpus(&self) -> &CorpusManifest {
        &self.corpus
    }

    pub fn load_state(&self) -> Result<RoundState> {
        let path = self.root.join("state.json");
        let bytes = fs::read(&path).map_err(|e| DialError::io(&path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn save_state(&self, state: &RoundState) -> Result<()> {
        write_atomic(
            &self.root.join("state.json"),
            &serde_json::to_vec_pretty(state)?,
        )
    }

    pub fn slide_dir(&self, slide_id: &str) -> PathBuf {
        self.root.join("slides").join(slide_id)
    }

    pub fn mask_path(&self, slide_id: &str, round: usize) -> PathBuf {
        self.root
            .join("masks")
            .join(slide_id)
            .join(format!("round-{round}.mask"))
    }

    pub fn truth_path(&self, slide_id: &str) -> PathBuf {
        self.root.join("truth").join(format!("{slide_id}.mask"))
    }

    pub fn refs_path(&self) -> PathBuf {
        self.root.join("refs.csv")
    }

    pub fn patch_path(&self, round: usize, deformed: bool) -> PathBuf {
        let suffix = if deformed { "-deformed" } else { "" };
        self.root
            .join("patches")
            .join(format!("round-{round}{suffix}.ptch"))
    }

    pub fn checkpoint_path(&self, tag: &str) -> PathBuf {
        self.root.join("checkpoints").join(format!("{tag}.ckpt"))
    }

    pub fn prediction_path(&self, tag: &str, slide_id: &str) -> PathBuf {
        self.root
            .join("predictions")
            .join(tag)
            .join(format!("{slide_id}.mask"))
    }

    pub fn slide_ref(&self, slide_id: &str) -> Option<&SlideRef> {
        self.corpus
            .train
            .iter()
            .chain(&self.corpus.test)
            .find(|s| s.slide_id == slide_id)
    }

    pub fn is_training_slide(&self, slide_id: &str) -> bool {
        self.corpus.train.iter().any(|s| s.slide_id == slide_id)
    }

    pub fn load_slide(&self, slide_id: &str) -> Result<WsiPyramid> {
        if self.slide_ref(slide_id).is_none() {
            return Err(DialError::NotFound {
                kind: "slide",
                id: slide_id.to_string(),
            });
        }
        load_slide(&self.slide_dir(slide_id))
    }

    pub fn train_slides(&self) -> Result<Vec<WsiPyramid>> {
        self.corpus
            .train
            .iter()
            .map(|s| self.load_slide(&s.slide_id))
            .collect()
    }

    /// Training-slide dims from the manifest, without loading pixels.
    pub fn slide_dims(&self, slide_id: &str) -> Result<(usize, usize)> {
        let m = crate::wsi::SlideManifest::load(&self.slide_dir(slide_id))?;
        Ok((m.width, m.height))
    }

    pub(crate) fn check_training_mask(&self, mask: &LabelMask) -> Result<()> {
        if !self.is_training_slide(&mask.slide_id) {
            return Err(DialError::RoundState(format!(
                "{} is not a training slide",
                mask.slide_id
            )));
        }
        let dims = self.slide_dims(&mask.slide_id)?;
        if mask.dims() != dims {
            return Err(DialError::DimensionMismatch {
                expected: dims,
                actual: mask.dims(),
            });
        }
        Ok(())
    }

    /// Masks of `slide_id` for rounds `0..=round` that exist on disk, in
    /// round order.
    pub fn masks_through(&self, slide_id: &str, round: usize) -> Result<Vec<LabelMask>> {
        let mut out = Vec::new();
        for k in 0..=round {
            let p = self.mask_path(slide_id, k);
            if p.exists() {
                out.push(LabelMask::load(&p, slide_id)?);
            }
        }
        Ok(out)
    }

    /// Annotation through `round` with later rounds overriding earlier
    /// ones; fully unlabeled when nothing exists yet.
    pub fn merged_mask(&self, slide_id: &str, round: usize) -> Result<LabelMask> {
        let masks = self.masks_through(slide_id, round)?;
        if masks.is_empty() {
            let (w, h) = self.slide_dims(slide_id)?;
            return Ok(LabelMask::unlabeled(slide_id, round as i32, w, h));
        }
        merge_masks(&masks)
    }

    pub fn load_truth(&self, slide_id: &str) -> Result<LabelMask> {
        LabelMask::load(&self.truth_path(slide_id), slide_id)
    }

    pub fn load_refs(&self) -> Result<BTreeMap<String, f64>> {
        let p = self.refs_path();
        if !p.exists() {
            return Ok(BTreeMap::new());
        }
        load_refs(&p)
    }

    pub fn load_prediction(&self, tag: &str, slide_id: &str) -> Result<SegmentationMap> {
        SegmentationMap::load(&self.prediction_path(tag, slide_id))
    }

    /// Test slides grouped by case, with references when available.
    pub fn test_cases(&self) -> Result<Vec<EvalCase>> {
        let refs = self.load_refs()?;
        let mut by_case: BTreeMap<String, Vec<WsiPyramid>> = BTreeMap::new();
        for s in &self.corpus.test {
            by_case
                .entry(s.case_id.clone())
                .or_default()
                .push(self.load_slide(&s.slide_id)?);
        }
        Ok(by_case
            .into_iter()
            .map(|(case_id, slides)| EvalCase {
                r_path: refs.get(&case_id).copied(),
                case_id,
                slides,
            })
            .collect())
    }
}
