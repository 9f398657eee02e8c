//! Case-level necrosis ratios and their error against reference values.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::class::{ClassCounts, ClassId, Palette, NUM_CLASSES};
use crate::dmmn::DmmnModel;
use crate::error::{DialError, Result};
use crate::inference::{overlay, segment_slide, SegmentationMap};
use crate::wsi::WsiPyramid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlideCounts {
    pub slide_id: String,
    pub counts: ClassCounts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub case_id: String,
    pub p_vt: u64,
    pub p_nt: u64,
    /// `p_NT / (p_VT + p_NT)`; `None` when no tumor was detected.
    pub r_dl: Option<f64>,
    pub r_path: Option<f64>,
    pub no_tumor: bool,
    pub slides: Vec<SlideCounts>,
}

impl CaseReport {
    pub fn abs_error(&self) -> Option<f64> {
        Some((self.r_path? - self.r_dl?).abs())
    }
}

fn tumor_counts(counts: &ClassCounts) -> (u64, u64) {
    let vt = counts[ClassId::ViableTumor.index()];
    let nt = ClassId::ALL
        .iter()
        .filter(|c| c.is_necrosis())
        .map(|c| counts[c.index()])
        .sum();
    (vt, nt)
}

pub fn ratio(p_vt: u64, p_nt: u64) -> Option<f64> {
    let total = p_vt + p_nt;
    (total > 0).then(|| p_nt as f64 / total as f64)
}

/// Sums the per-slide counts of one case, then takes the ratio.
pub fn case_report(case_id: &str, slides: &[SlideCounts]) -> Result<CaseReport> {
    if slides.is_empty() {
        return Err(DialError::InvalidConfig(format!(
            "case {case_id} has no slides"
        )));
    }
    let mut total = [0u64; NUM_CLASSES];
    for s in slides {
        for (t, c) in total.iter_mut().zip(&s.counts) {
            *t += c;
        }
    }
    let (p_vt, p_nt) = tumor_counts(&total);
    let r_dl = ratio(p_vt, p_nt);
    Ok(CaseReport {
        case_id: case_id.to_string(),
        p_vt,
        p_nt,
        r_dl,
        r_path: None,
        no_tumor: r_dl.is_none(),
        slides: slides.to_vec(),
    })
}

pub fn necrosis_ratio(case_id: &str, maps: &[&SegmentationMap]) -> Result<CaseReport> {
    let slides: Vec<SlideCounts> = maps
        .iter()
        .map(|m| SlideCounts {
            slide_id: m.slide_id.clone(),
            counts: *m.counts(),
        })
        .collect();
    case_report(case_id, &slides)
}

/// Mean absolute difference over cases that have both a reference and a
/// defined predicted ratio.
pub fn error_rate(reports: &[CaseReport]) -> Result<f64> {
    let errs: Vec<f64> = reports.iter().filter_map(CaseReport::abs_error).collect();
    if errs.is_empty() {
        return Err(DialError::NoEligibleCases(format!(
            "none of {} cases has both a reference and a detected tumor",
            reports.len()
        )));
    }
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

#[derive(Debug, Deserialize)]
struct RefRow {
    case_id: String,
    #[serde(rename = "R_PATH")]
    r_path: f64,
}

/// Reads `case_id,R_PATH` rows.
pub fn load_refs(path: &Path) -> Result<BTreeMap<String, f64>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = BTreeMap::new();
    for row in rdr.deserialize() {
        let row: RefRow = row?;
        if !(0.0..=1.0).contains(&row.r_path) {
            return Err(DialError::Format(format!(
                "reference ratio {} for {} outside [0, 1]",
                row.r_path, row.case_id
            )));
        }
        if out.insert(row.case_id.clone(), row.r_path).is_some() {
            return Err(DialError::Format(format!(
                "duplicate reference for {}",
                row.case_id
            )));
        }
    }
    Ok(out)
}

pub fn write_refs(path: &Path, refs: &BTreeMap<String, f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["case_id", "R_PATH"])?;
    for (case, r) in refs {
        w.write_record([case.clone(), r.to_string()])?;
    }
    w.flush().map_err(|e| DialError::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssessmentReport {
    pub model_hash: Option<String>,
    pub cases: Vec<CaseReport>,
    pub error_rate: Option<f64>,
    /// Cases left out of the error rate, with the reason.
    pub excluded: Vec<(String, String)>,
}

impl AssessmentReport {
    /// Attaches references and computes the error rate. Cases sort by id.
    pub fn new(
        model_hash: Option<String>,
        mut cases: Vec<CaseReport>,
        refs: &BTreeMap<String, f64>,
    ) -> AssessmentReport {
        cases.sort_by(|a, b| a.case_id.cmp(&b.case_id));
        let mut excluded = Vec::new();
        for c in &mut cases {
            c.r_path = refs.get(&c.case_id).copied();
            if c.no_tumor {
                excluded.push((c.case_id.clone(), "no tumor detected".to_string()));
            } else if c.r_path.is_none() {
                excluded.push((c.case_id.clone(), "no reference ratio".to_string()));
            }
        }
        let error_rate = error_rate(&cases).ok();
        AssessmentReport {
            model_hash,
            cases,
            error_rate,
            excluded,
        }
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("# Necrosis assessment\n\n");
        if let Some(h) = &self.model_hash {
            let _ = writeln!(s, "Model: `{h}`\n");
        }
        s.push_str("| case | p_VT | p_NT | R_DL | R_PATH | abs error |\n");
        s.push_str("|---|---:|---:|---:|---:|---:|\n");
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
        for c in &self.cases {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} | {} |",
                c.case_id,
                c.p_vt,
                c.p_nt,
                fmt(c.r_dl),
                fmt(c.r_path),
                fmt(c.abs_error())
            );
        }
        let _ = writeln!(s, "\nError rate E = {}", fmt(self.error_rate));
        for (case, why) in &self.excluded {
            let _ = writeln!(s, "\n**Excluded {case}: {why}.**");
        }
        s
    }

    /// Writes `report.json` and `report.md` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| DialError::io(dir, e))?;
        let json = dir.join("report.json");
        fs::write(&json, serde_json::to_vec_pretty(self)?).map_err(|e| DialError::io(&json, e))?;
        let md = dir.join("report.md");
        fs::write(&md, self.to_markdown()).map_err(|e| DialError::io(&md, e))
    }
}

/// Writes a 5× overlay PNG per slide into `dir` and returns markdown image
/// links for them.
pub fn write_thumbnails(
    dir: &Path,
    items: &[(&WsiPyramid, &SegmentationMap)],
    palette: &Palette,
) -> Result<String> {
    fs::create_dir_all(dir).map_err(|e| DialError::io(dir, e))?;
    let mut md = String::new();
    for (slide, map) in items {
        let img = overlay(slide, map.data(), palette, 0.5, 2)?;
        let name = format!("{}.png", slide.slide_id);
        let path = dir.join(&name);
        fs::write(&path, img.encode_png()?).map_err(|e| DialError::io(&path, e))?;
        let _ = writeln!(md, "![{}]({name})", slide.slide_id);
    }
    Ok(md)
}

/// A test case: its slides and an optional reference ratio.
#[derive(Clone, Debug)]
pub struct EvalCase {
    pub case_id: String,
    pub slides: Vec<WsiPyramid>,
    pub r_path: Option<f64>,
}

/// Segments every slide and assesses the cases with one model.
pub fn assess_model(
    model: &DmmnModel,
    model_hash: &str,
    cases: &[EvalCase],
    workers: usize,
) -> Result<AssessmentReport> {
    Ok(assess_model_with_maps(model, model_hash, cases, workers)?.0)
}

/// [`assess_model`], also returning the segmentation maps in case and
/// slide order.
pub fn assess_model_with_maps(
    model: &DmmnModel,
    model_hash: &str,
    cases: &[EvalCase],
    workers: usize,
) -> Result<(AssessmentReport, Vec<SegmentationMap>)> {
    let mut reports = Vec::with_capacity(cases.len());
    let mut refs = BTreeMap::new();
    let mut all = Vec::new();
    for case in cases {
        let maps = case
            .slides
            .iter()
            .map(|s| segment_slide(model, model_hash, s, workers))
            .collect::<Result<Vec<_>>>()?;
        let refs_of: Vec<&SegmentationMap> = maps.iter().collect();
        reports.push(necrosis_ratio(&case.case_id, &refs_of)?);
        if let Some(r) = case.r_path {
            refs.insert(case.case_id.clone(), r);
        }
        all.extend(maps);
    }
    let report = AssessmentReport::new(Some(model_hash.to_string()), reports, &refs);
    Ok((report, all))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model_id: String,
    pub model_hash: String,
    pub error_rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    /// In the order the models were given (lineage order).
    pub rows: Vec<ComparisonRow>,
    /// Model with the lowest error rate; the earliest wins ties.
    pub best: Option<String>,
}

impl ModelComparison {
    pub fn from_rows(rows: Vec<ComparisonRow>) -> Self {
        let mut best: Option<(&str, f64)> = None;
        for r in &rows {
            if let Some(e) = r.error_rate {
                if best.is_none_or(|(_, b)| e < b) {
                    best = Some((&r.model_id, e));
                }
            }
        }
        let best = best.map(|(id, _)| id.to_string());
        ModelComparison { rows, best }
    }

    pub fn error_of(&self, model_id: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.model_id == model_id)?
            .error_rate
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| model | E | |\n|---|---:|---|\n");
        for r in &self.rows {
            let e = r.error_rate.map_or("n/a".into(), |e| format!("{e:.4}"));
            let mark = if self.best.as_deref() == Some(r.model_id.as_str()) {
                "best"
            } else {
                ""
            };
            let _ = writeln!(s, "| {} | {e} | {mark} |", r.model_id);
        }
        s
    }
}

/// Error rate of each model on the same cases.
pub fn model_comparison(
    models: &[(String, String, &DmmnModel)],
    cases: &[EvalCase],
    workers: usize,
) -> Result<ModelComparison> {
    if models.len() < 2 {
        return Err(DialError::InvalidConfig(
            "comparison needs at least two models".into(),
        ));
    }
    let mut rows = Vec::with_capacity(models.len());
    for (id, hash, model) in models {
        let report = assess_model(model, hash, cases, workers)?;
        rows.push(ComparisonRow {
            model_id: id.clone(),
            model_hash: hash.clone(),
            error_rate: report.error_rate,
        });
    }
    Ok(ModelComparison::from_rows(rows))
}
