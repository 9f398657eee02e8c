use serde::{Deserialize, Serialize};

use crate::class::ClassCounts;
use crate::dmmn::TrainHistory;
use crate::error::{DialError, Result};
use crate::patch::LossWeights;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundStatus {
    AwaitingTraining,
    AwaitingCorrection,
    Satisfied,
}

/// How correction patches enter the training set: `Single` adds them once,
/// `Double` adds them plus one elastically deformed copy of each.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionPolicy {
    Single,
    Double,
}

impl CorrectionPolicy {
    pub fn deforms(self) -> bool {
        self == CorrectionPolicy::Double
    }
}

impl std::str::FromStr for CorrectionPolicy {
    type Err = DialError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(CorrectionPolicy::Single),
            "double" => Ok(CorrectionPolicy::Double),
            other => Err(DialError::InvalidConfig(format!(
                "weighting must be `single` or `double`, got `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for CorrectionPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CorrectionPolicy::Single => "single",
            CorrectionPolicy::Double => "double",
        })
    }
}

/// One round's contribution to a model's training data. Round 0 has no
/// policy; its balancing copies are always included.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataPart {
    pub round: usize,
    pub policy: Option<CorrectionPolicy>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub tag: String,
    pub hash: String,
    pub parent: Option<String>,
    pub parent_hash: Option<String>,
    pub round: usize,
    pub policy: Option<CorrectionPolicy>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub composition: Vec<DataPart>,
    /// Patches added by this model's own round, deformed copies included.
    pub round_patches: usize,
    pub round_counts: ClassCounts,
    pub cumulative_counts: ClassCounts,
    pub weights: LossWeights,
    pub train_patches: usize,
    pub val_patches: usize,
    pub val_cases: Vec<String>,
    pub history: TrainHistory,
    /// Checkpoint hashes from the root model down to this one.
    pub lineage: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectionSet {
    pub round: usize,
    pub slides: Vec<String>,
    pub counts: ClassCounts,
}

impl CorrectionSet {
    pub fn pixels(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundState {
    pub round_index: usize,
    pub status: RoundStatus,
    /// Hashes along the active model's ancestry.
    pub lineage: Vec<String>,
    pub active: Option<String>,
    pub models: Vec<ModelEntry>,
    pub corrections: Vec<CorrectionSet>,
    /// Round whose corrections were submitted but not yet trained on.
    pub pending: Option<usize>,
}

impl Default for RoundState {
    fn default() -> Self {
        RoundState {
            round_index: 0,
            status: RoundStatus::AwaitingTraining,
            lineage: Vec::new(),
            active: None,
            models: Vec::new(),
            corrections: Vec::new(),
            pending: None,
        }
    }
}

impl RoundState {
    pub fn model(&self, tag: &str) -> Option<&ModelEntry> {
        self.models.iter().find(|m| m.tag == tag)
    }

    pub fn require_model(&self, tag: &str) -> Result<&ModelEntry> {
        self.model(tag).ok_or_else(|| DialError::NotFound {
            kind: "model",
            id: tag.to_string(),
        })
    }

    pub fn active_model(&self) -> Option<&ModelEntry> {
        self.model(self.active.as_deref()?)
    }

    pub fn correction(&self, round: usize) -> Option<&CorrectionSet> {
        self.corrections.iter().find(|c| c.round == round)
    }

    /// Round the next correction masks must carry.
    pub fn next_correction_round(&self) -> usize {
        self.round_index + 1
    }

    pub fn can_train(&self) -> bool {
        self.status == RoundStatus::AwaitingTraining
    }

    pub fn can_correct(&self) -> bool {
        self.status == RoundStatus::AwaitingCorrection && self.pending.is_none()
    }

    pub fn check_status(&self, want: RoundStatus, action: &str) -> Result<()> {
        if self.status != want {
            return Err(DialError::RoundState(format!(
                "cannot {action} while status is {:?}",
                self.status
            )));
        }
        Ok(())
    }

    /// Default tag for a model trained in `round`: `Model{round+1}`, with a
    /// letter suffix when that tag is taken.
    pub fn fresh_tag(&self, round: usize) -> String {
        let base = format!("Model{}", round + 1);
        if self.model(&base).is_none() {
            return base;
        }
        (b'a'..=b'z')
            .map(|c| format!("{base}{}", c as char))
            .find(|t| self.model(t).is_none())
            .unwrap_or_else(|| format!("{base}-{}", self.models.len()))
    }

    /// Cumulative labeled-pixel count per round along the active lineage.
    pub fn cumulative_pixels(&self) -> Vec<u64> {
        let Some(active) = self.active_model() else {
            return Vec::new();
        };
        let chain: Vec<&ModelEntry> = active
            .lineage
            .iter()
            .filter_map(|h| self.models.iter().find(|m| &m.hash == h))
            .collect();
        chain
            .iter()
            .map(|m| m.cumulative_counts.iter().sum())
            .collect()
    }
}
