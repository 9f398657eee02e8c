//! The long-running work behind the round endpoints. The service talks to
//! it through a trait so tests can swap in a controllable stand-in.

use dial_core::assess::{assess_model_with_maps, write_thumbnails, ComparisonRow, ModelComparison};
use dial_core::dial::{
    finetune_round, load_model, run_initial_round, write_atomic, CorrectionPolicy, FinetuneOptions,
    Progress, RoundState, Workspace,
};
use dial_core::{Palette, Result};

pub trait Backend: Send + Sync + 'static {
    fn initial(
        &self,
        ws: &Workspace,
        state: RoundState,
        progress: &mut Progress,
    ) -> Result<RoundState>;

    fn finetune(
        &self,
        ws: &Workspace,
        state: RoundState,
        policy: CorrectionPolicy,
        opts: &FinetuneOptions,
        progress: &mut Progress,
    ) -> Result<RoundState>;

    /// Writes `reports/<tag>/report.{json,md}` for every model and
    /// `reports/comparison.json`.
    fn assess(&self, ws: &Workspace, state: &RoundState, progress: &mut Progress) -> Result<()>;
}

/// The real engine.
pub struct EngineBackend;

impl Backend for EngineBackend {
    fn initial(
        &self,
        ws: &Workspace,
        state: RoundState,
        progress: &mut Progress,
    ) -> Result<RoundState> {
        run_initial_round(ws, state, progress)
    }

    fn finetune(
        &self,
        ws: &Workspace,
        state: RoundState,
        policy: CorrectionPolicy,
        opts: &FinetuneOptions,
        progress: &mut Progress,
    ) -> Result<RoundState> {
        finetune_round(ws, state, policy, opts, progress)
    }

    fn assess(&self, ws: &Workspace, state: &RoundState, progress: &mut Progress) -> Result<()> {
        assess_workspace(ws, state, progress).map(|_| ())
    }
}

/// Assesses every registered model on the workspace's test cases, in
/// lineage order.
pub fn assess_workspace(
    ws: &Workspace,
    state: &RoundState,
    progress: &mut Progress,
) -> Result<ModelComparison> {
    let cases = ws.test_cases()?;
    let n = state.models.len().max(1) as f64;
    let mut rows = Vec::new();
    for (i, m) in state.models.iter().enumerate() {
        progress(i as f64 / n, &format!("assessing {}", m.tag));
        let (ckpt, hash) = load_model(ws, state, &m.tag)?;
        let (report, maps) =
            assess_model_with_maps(&ckpt.model, &hash, &cases, ws.config().workers)?;
        let dir = ws.root().join("reports").join(&m.tag);
        report.write(&dir)?;
        if state.active.as_deref() == Some(m.tag.as_str()) {
            let items: Vec<_> = cases.iter().flat_map(|c| &c.slides).zip(&maps).collect();
            let md = write_thumbnails(&dir.join("thumbnails"), &items, &Palette::default())?;
            let text = format!(
                "{}\n## Overlays\n\n{}",
                report.to_markdown(),
                md.replace("](", "](thumbnails/")
            );
            write_atomic(&dir.join("report.md"), text.as_bytes())?;
        }
        rows.push(ComparisonRow {
            model_id: m.tag.clone(),
            model_hash: hash,
            error_rate: report.error_rate,
        });
    }
    let cmp = ModelComparison::from_rows(rows);
    write_atomic(
        &ws.root().join("reports").join("comparison.json"),
        &serde_json::to_vec_pretty(&cmp)?,
    )?;
    progress(1.0, "assessment written");
    Ok(cmp)
}
