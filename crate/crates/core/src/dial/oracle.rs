//! Scripted annotator that fixes the largest prediction errors first.

use crate::class::UNLABELED;
use crate::error::{DialError, Result};
use crate::inference::SegmentationMap;
use crate::mask::LabelMask;
use crate::raster::LabelRaster;

/// An 8-connected region of disagreement on one slide.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Component {
    pub slide: usize,
    /// Row-major pixel indices, sorted.
    pub pixels: Vec<u32>,
}

/// 8-connected components of the `true` cells, in order of their first
/// pixel in row-major scan.
pub fn connected_components(mask: &[bool], width: usize, height: usize) -> Vec<Vec<u32>> {
    assert_eq!(mask.len(), width * height);
    let mut seen = vec![false; mask.len()];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut comp = Vec::new();
        while let Some(i) = stack.pop() {
            comp.push(i as u32);
            let (x, y) = ((i % width) as i64, (i / width) as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
                        continue;
                    }
                    let j = ny as usize * width + nx as usize;
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Disagreement components of every slide, largest first. Ties keep slide
/// order, then scan order.
pub fn ranked_components(
    predictions: &[&LabelRaster],
    truth: &[&LabelRaster],
) -> Result<Vec<Component>> {
    if predictions.len() != truth.len() {
        return Err(DialError::InvalidConfig(format!(
            "{} predictions for {} ground-truth masks",
            predictions.len(),
            truth.len()
        )));
    }
    let mut all = Vec::new();
    for (slide, (p, t)) in predictions.iter().zip(truth).enumerate() {
        if p.dims() != t.dims() {
            return Err(DialError::DimensionMismatch {
                expected: t.dims(),
                actual: p.dims(),
            });
        }
        let (w, h) = p.dims();
        let diff: Vec<bool> = p
            .as_raw()
            .iter()
            .zip(t.as_raw())
            .map(|(&a, &b)| b != UNLABELED && a != b)
            .collect();
        all.extend(
            connected_components(&diff, w, h)
                .into_iter()
                .map(|pixels| Component { slide, pixels }),
        );
    }
    // Stable sort keeps slide and scan order among equal sizes.
    all.sort_by_key(|c| std::cmp::Reverse(c.pixels.len()));
    Ok(all)
}

/// Selects disagreement components greedily by size until at least
/// `budget_pixels` are selected or none are left, and returns them as
/// `round` masks labeled with the true classes. Slides with nothing
/// selected get no mask.
pub fn oracle_correct(
    predictions: &[SegmentationMap],
    truth: &[LabelMask],
    round: usize,
    budget_pixels: u64,
) -> Result<Vec<LabelMask>> {
    for (p, t) in predictions.iter().zip(truth) {
        if p.slide_id != t.slide_id {
            return Err(DialError::SlideMismatch {
                expected: t.slide_id.clone(),
                actual: p.slide_id.clone(),
            });
        }
    }
    let truth_rasters: Vec<LabelRaster> = truth.iter().map(LabelMask::to_raster).collect();
    let preds: Vec<&LabelRaster> = predictions.iter().map(|p| p.data()).collect();
    let truths: Vec<&LabelRaster> = truth_rasters.iter().collect();
    let ranked = ranked_components(&preds, &truths)?;

    let mut out: Vec<Option<LabelRaster>> = vec![None; predictions.len()];
    let mut selected = 0u64;
    for comp in ranked {
        if selected >= budget_pixels {
            break;
        }
        let t = &truth_rasters[comp.slide];
        let (w, h) = t.dims();
        let raster = out[comp.slide].get_or_insert_with(|| LabelRaster::unlabeled(w, h));
        for &i in &comp.pixels {
            raster.as_raw_mut()[i as usize] = t.as_raw()[i as usize];
        }
        selected += comp.pixels.len() as u64;
    }
    Ok(out
        .into_iter()
        .zip(truth)
        .filter_map(|(r, t)| {
            r.map(|r| LabelMask::from_raster(t.slide_id.clone(), round as i32, &r))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_neighbours_join() {
        #[rustfmt::skip]
        let m = [
            true, false, false,
            false, true, false,
            false, false, true,
        ];
        assert_eq!(connected_components(&m, 3, 3), vec![vec![0, 4, 8]]);
        let m = [true, false, true, false];
        assert_eq!(connected_components(&m, 4, 1), vec![vec![0], vec![2]]);
    }
}
