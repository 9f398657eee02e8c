//! The four-model closed loop on a synthetic corpus: Model1 from sparse
//! annotation, Model2a and Model2b finetuned from it with single and double
//! weighted oracle corrections, and Model3 finetuned from Model2b.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::engine::{
    finetune_round, load_model, oracle_round, run_initial_round, submit_corrections,
    FinetuneOptions, Progress,
};
use super::state::{CorrectionPolicy, RoundState};
use super::workspace::{DialConfig, NewCorpus, Workspace};
use crate::assess::{assess_model, ComparisonRow, ModelComparison};
use crate::error::Result;
use crate::seed::SeedBuilder;
use crate::synth::{
    generate_synthetic_case, simulate_initial_annotation, AnnotationParams, SyntheticCaseSpec,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub seed: u64,
    pub train_cases: usize,
    pub test_cases: usize,
    pub slide_size: usize,
    pub annotation_fraction: f64,
    /// Necrosis ratio targets are drawn uniformly from this range.
    pub ratio_range: (f64, f64),
}

impl CorpusSpec {
    pub fn new(seed: u64) -> Self {
        CorpusSpec {
            seed,
            train_cases: 6,
            test_cases: 8,
            slide_size: 2048,
            annotation_fraction: 0.10,
            ratio_range: (0.1, 0.9),
        }
    }
}

/// Training cases get sparse simulated annotation and full ground truth;
/// test cases get their achieved ratios as references.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<NewCorpus> {
    let mut rng = SeedBuilder::new("corpus").u64(spec.seed).rng();
    let mut corpus = NewCorpus::default();
    let (lo, hi) = spec.ratio_range;
    for (prefix, n) in [("train", spec.train_cases), ("test", spec.test_cases)] {
        for i in 0..n {
            let case_id = format!("{prefix}-{i:02}");
            let target = rng.random_range(lo..=hi);
            let case_seed = SeedBuilder::new("case")
                .u64(spec.seed)
                .str(&case_id)
                .finish();
            let case = generate_synthetic_case(
                &SyntheticCaseSpec::new(case_id.clone(), target, case_seed)
                    .with_size(spec.slide_size, spec.slide_size),
            )?;
            if prefix == "test" {
                corpus.refs.insert(case_id, case.achieved_ratio);
                corpus
                    .test
                    .extend(case.slides.into_iter().map(|s| s.pyramid));
                continue;
            }
            for s in case.slides {
                let params = AnnotationParams {
                    fraction: spec.annotation_fraction,
                    seed: spec.seed,
                    ..AnnotationParams::default()
                };
                corpus
                    .initial_masks
                    .push(simulate_initial_annotation(&s, &params));
                corpus.truth.push(s.truth);
                corpus.train.push(s.pyramid);
            }
        }
    }
    Ok(corpus)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub corpus: CorpusSpec,
    pub dial: DialConfig,
    /// Oracle correction budget per round, in 20× pixels.
    pub budget_pixels: u64,
}

impl ExperimentConfig {
    pub fn test_scale(seed: u64) -> Self {
        ExperimentConfig {
            corpus: CorpusSpec::new(seed),
            dial: DialConfig::test_scale(seed),
            budget_pixels: 400_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub comparison: ModelComparison,
    pub state: RoundState,
}

impl ExperimentReport {
    pub fn error(&self, tag: &str) -> Option<f64> {
        self.comparison.error_of(tag)
    }
}

/// Maps a sub-task's `[0, 1]` progress onto `[from, to]` of the whole.
fn stage<'a, 'b>(
    progress: &'a mut Progress<'b>,
    from: f64,
    to: f64,
    label: &'static str,
) -> Box<Progress<'a>>
where
    'b: 'a,
{
    Box::new(move |f, msg| progress(from + (to - from) * f, &format!("{label}: {msg}")))
}

/// Runs the loop in a fresh workspace at `root` and compares the four
/// models on the test cases.
pub fn run_experiment(
    root: &Path,
    cfg: &ExperimentConfig,
    progress: &mut Progress,
) -> Result<ExperimentReport> {
    progress(0.0, "generating corpus");
    let corpus = generate_corpus(&cfg.corpus)?;
    let ws = Workspace::create(root, cfg.dial.clone(), &corpus)?;
    drop(corpus);
    let single = |tag: &str| FinetuneOptions {
        parent: Some("Model1".into()),
        tag: Some(tag.into()),
    };

    let state = run_initial_round(
        &ws,
        ws.load_state()?,
        &mut *stage(progress, 0.0, 0.3, "Model1"),
    )?;
    let masks = oracle_round(&ws, &state, cfg.budget_pixels)?;
    let state = submit_corrections(&ws, state, masks, false)?;
    let state = finetune_round(
        &ws,
        state,
        CorrectionPolicy::Single,
        &single("Model2a"),
        &mut *stage(progress, 0.3, 0.5, "Model2a"),
    )?;
    let state = finetune_round(
        &ws,
        state,
        CorrectionPolicy::Double,
        &single("Model2b"),
        &mut *stage(progress, 0.5, 0.7, "Model2b"),
    )?;
    let masks = oracle_round(&ws, &state, cfg.budget_pixels)?;
    let state = submit_corrections(&ws, state, masks, false)?;
    let opts = FinetuneOptions {
        parent: Some("Model2b".into()),
        tag: Some("Model3".into()),
    };
    let state = finetune_round(
        &ws,
        state,
        CorrectionPolicy::Double,
        &opts,
        &mut *stage(progress, 0.7, 0.9, "Model3"),
    )?;

    progress(0.9, "assessing");
    let cases = ws.test_cases()?;
    let mut rows = Vec::new();
    for tag in ["Model1", "Model2a", "Model2b", "Model3"] {
        let (ckpt, hash) = load_model(&ws, &state, tag)?;
        let report = assess_model(&ckpt.model, &hash, &cases, cfg.dial.workers)?;
        report.write(&root.join("reports").join(tag))?;
        rows.push(ComparisonRow {
            model_id: tag.into(),
            model_hash: hash,
            error_rate: report.error_rate,
        });
    }
    let comparison = ModelComparison::from_rows(rows);
    let report = ExperimentReport {
        seed: cfg.corpus.seed,
        comparison,
        state,
    };
    crate::dial::workspace::write_atomic(
        &root.join("reports").join("comparison.json"),
        &serde_json::to_vec_pretty(&report.comparison)?,
    )?;
    progress(1.0, "done");
    Ok(report)
}

/// Per-seed verdicts of the closed-loop experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopVerdict {
    pub seed: u64,
    pub errors: BTreeMap<String, f64>,
    /// `E(2b) ≤ E(2a)` or `E(2b) ≤ E(1) − 0.02`.
    pub double_helps: bool,
    /// `E(2b) ≤ E(1)`.
    pub no_worse_than_model1: bool,
}

impl LoopVerdict {
    pub fn of(report: &ExperimentReport) -> LoopVerdict {
        let errors: BTreeMap<String, f64> = report
            .comparison
            .rows
            .iter()
            .filter_map(|r| Some((r.model_id.clone(), r.error_rate?)))
            .collect();
        let e = |t: &str| errors.get(t).copied().unwrap_or(f64::INFINITY);
        let (m1, m2a, m2b) = (e("Model1"), e("Model2a"), e("Model2b"));
        LoopVerdict {
            seed: report.seed,
            double_helps: m2b <= m2a || m2b <= m1 - 0.02,
            no_worse_than_model1: m2b <= m1,
            errors,
        }
    }
}
