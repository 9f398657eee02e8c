use std::collections::{BTreeMap, BTreeSet};

use super::{patch_class_counts, PatchRecord};
use crate::class::{ClassCounts, NUM_CLASSES};
use crate::error::{DialError, Result};

/// A case is only moved to validation if no class would then exceed
/// `SPLIT_UPPER_FACTOR · target` of its pixels there.
pub const SPLIT_UPPER_FACTOR: f64 = 1.5;

#[derive(Clone, Debug, Default)]
pub struct DatasetSplit {
    pub train: Vec<PatchRecord>,
    pub val: Vec<PatchRecord>,
    pub train_counts: ClassCounts,
    pub val_counts: ClassCounts,
    pub val_cases: BTreeSet<String>,
}

impl DatasetSplit {
    /// Per-class share of labeled pixels on the validation side; `None` for
    /// classes absent from both sides.
    pub fn val_fractions(&self) -> [Option<f64>; NUM_CLASSES] {
        let mut out = [None; NUM_CLASSES];
        for c in 0..NUM_CLASSES {
            let total = self.train_counts[c] + self.val_counts[c];
            if total > 0 {
                out[c] = Some(self.val_counts[c] as f64 / total as f64);
            }
        }
        out
    }
}

fn fractions<'a>(val: &'a ClassCounts, totals: &'a ClassCounts) -> impl Iterator<Item = f64> + 'a {
    val.iter()
        .zip(totals)
        .filter(|(_, &t)| t > 0)
        .map(|(&v, &t)| v as f64 / t as f64)
}

/// Greedy choice of validation cases. Cases are visited in descending total
/// pixel count; each is added while the worst-covered class on the
/// validation side is below `target_fraction`, provided the addition keeps
/// every class within `SPLIT_UPPER_FACTOR · target_fraction` and leaves at
/// least one training case. If no case fits, the smallest one is used.
pub fn assign_validation_cases(
    cases: &[(String, ClassCounts)],
    target_fraction: f64,
) -> Result<BTreeSet<String>> {
    if cases.len() < 2 {
        return Err(DialError::Split(format!(
            "need at least two cases, got {}",
            cases.len()
        )));
    }
    let mut totals = [0u64; NUM_CLASSES];
    for (_, counts) in cases {
        for (t, c) in totals.iter_mut().zip(counts) {
            *t += c;
        }
    }
    let mut order: Vec<&(String, ClassCounts)> = cases.iter().collect();
    order.sort_by(|a, b| {
        let (ta, tb) = (a.1.iter().sum::<u64>(), b.1.iter().sum::<u64>());
        tb.cmp(&ta).then_with(|| a.0.cmp(&b.0))
    });
    let upper = target_fraction * SPLIT_UPPER_FACTOR;
    let mut val = [0u64; NUM_CLASSES];
    let mut chosen = BTreeSet::new();
    for (id, counts) in &order {
        let worst = fractions(&val, &totals).fold(f64::INFINITY, f64::min);
        if worst >= target_fraction {
            break;
        }
        if chosen.len() + 1 == cases.len() {
            break;
        }
        let mut next = val;
        for (n, c) in next.iter_mut().zip(counts) {
            *n += c;
        }
        if fractions(&next, &totals).all(|f| f <= upper) {
            val = next;
            chosen.insert(id.clone());
        }
    }
    if chosen.is_empty() {
        let smallest = order.last().expect("at least two cases");
        chosen.insert(smallest.0.clone());
    }
    Ok(chosen)
}

pub fn split_by_case(patches: Vec<PatchRecord>, target_fraction: f64) -> Result<DatasetSplit> {
    let mut per_case: BTreeMap<String, ClassCounts> = BTreeMap::new();
    for p in &patches {
        let entry = per_case.entry(p.case_id.clone()).or_default();
        for (e, c) in entry.iter_mut().zip(p.class_counts()) {
            *e += c;
        }
    }
    let cases: Vec<(String, ClassCounts)> = per_case.into_iter().collect();
    let val_cases = assign_validation_cases(&cases, target_fraction)?;
    let (val, train): (Vec<_>, Vec<_>) = patches
        .into_iter()
        .partition(|p| val_cases.contains(&p.case_id));
    Ok(DatasetSplit {
        train_counts: patch_class_counts(&train),
        val_counts: patch_class_counts(&val),
        train,
        val,
        val_cases,
    })
}
