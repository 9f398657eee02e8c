use serde::{Deserialize, Serialize};

use super::{elastic_deform, patch_class_counts, DeformParams, PatchRecord};
use crate::class::{ClassCounts, NUM_CLASSES};

/// A class is rare when its pixel count is below this fraction of the
/// largest class count.
pub const RARE_FRACTION: f64 = 0.7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceParams {
    pub rare_fraction: f64,
    /// Maximum number of deformed copies per original patch.
    pub k_max: usize,
    pub deform: DeformParams,
    pub seed: u64,
}

impl Default for BalanceParams {
    fn default() -> Self {
        BalanceParams {
            rare_fraction: RARE_FRACTION,
            k_max: 3,
            deform: DeformParams::default(),
            seed: 0,
        }
    }
}

/// `count < fraction · max`, compared exactly in integers when `fraction`
/// is the default 0.7.
pub fn is_rare(count: u64, max: u64, fraction: f64) -> bool {
    if fraction == RARE_FRACTION {
        (count as u128) * 10 < (max as u128) * 7
    } else {
        (count as f64) < fraction * max as f64
    }
}

pub fn rare_classes(counts: &ClassCounts, fraction: f64) -> [bool; NUM_CLASSES] {
    let max = counts.iter().copied().max().unwrap_or(0);
    let mut out = [false; NUM_CLASSES];
    for (o, &c) in out.iter_mut().zip(counts) {
        *o = is_rare(c, max, fraction);
    }
    out
}

/// Appends elastically deformed duplicates of patches whose modal class is
/// rare, sweeping the originals round-robin (each sweep deforms every
/// still-rare patch once, with a fresh seed) until no class is rare or every
/// rare-class patch has `k_max` copies. Originals come first in the output,
/// in their input order.
pub fn balance_by_deformation(
    patches: Vec<PatchRecord>,
    params: &BalanceParams,
) -> Vec<PatchRecord> {
    let mut counts = patch_class_counts(&patches);
    let originals = patches.len();
    let modal: Vec<Option<usize>> = patches.iter().map(PatchRecord::modal_class).collect();
    let mut copies = vec![0usize; originals];
    let mut out = patches;
    for sweep in 0..params.k_max {
        let rare = rare_classes(&counts, params.rare_fraction);
        if !rare.iter().any(|&r| r) {
            break;
        }
        let mut added = false;
        for i in 0..originals {
            let Some(class) = modal[i] else { continue };
            // Re-evaluate after every addition so a class stops growing once
            // it crosses the threshold mid-sweep.
            if !rare_classes(&counts, params.rare_fraction)[class] || copies[i] > sweep {
                continue;
            }
            let seed = out[i].seed(params.seed).u64(copies[i] as u64).finish();
            let deformed = elastic_deform(&out[i], seed, &params.deform);
            for (c, n) in counts.iter_mut().zip(deformed.class_counts()) {
                *c += n;
            }
            copies[i] += 1;
            out.push(deformed);
            added = true;
        }
        if !added {
            break;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{LabelRaster, RgbImage};

    fn patch(class: u8, pixels: usize, id: usize) -> PatchRecord {
        let size = 16;
        let mut target = LabelRaster::unlabeled(size, size);
        for i in 0..pixels {
            target.set(i % size, i / size, class);
        }
        let img = RgbImage::filled(size, size, [class * 20, 0, 0]);
        PatchRecord {
            slide_id: format!("s{id}"),
            case_id: "c".into(),
            center: (id as i64 * 16, 0),
            img20: img.clone(),
            img10: img.clone(),
            img5: img,
            target,
            round: 0,
            deformed: false,
        }
    }

    #[test]
    fn seventy_percent_is_strict() {
        assert!(is_rare(699, 1000, RARE_FRACTION));
        assert!(!is_rare(700, 1000, RARE_FRACTION));
        assert!(!is_rare(1000, 1000, RARE_FRACTION));
        let r = rare_classes(&[1000, 699, 700, 0, 1000, 1000, 1000], RARE_FRACTION);
        assert_eq!(r, [false, true, false, true, false, false, false]);
    }

    #[test]
    fn balanced_input_is_untouched() {
        let patches: Vec<_> = (0..7).map(|c| patch(c as u8, 100, c)).collect();
        let out = balance_by_deformation(patches.clone(), &BalanceParams::default());
        assert_eq!(out, patches);
    }

    #[test]
    fn rare_class_is_topped_up() {
        let mut patches = vec![patch(0, 256, 0), patch(0, 256, 1), patch(0, 256, 2)];
        patches.push(patch(2, 256, 3));
        let params = BalanceParams {
            deform: DeformParams {
                alpha: 0.0,
                grid: 4,
            },
            ..Default::default()
        };
        let out = balance_by_deformation(patches.clone(), &params);
        assert_eq!(&out[..4], &patches[..]);
        // Two copies bring class 2 from 256 to 768 pixels.
        let extra: Vec<_> = out[4..].iter().collect();
        assert_eq!(extra.len(), 2);
        assert!(extra.iter().all(|p| p.deformed && p.slide_id == "s3"));
    }

    #[test]
    fn copies_are_capped() {
        let patches = vec![
            patch(0, 256, 0),
            patch(0, 256, 1),
            patch(0, 256, 2),
            patch(0, 256, 3),
        ];
        let mut all = patches;
        all.push(patch(5, 10, 9));
        let out = balance_by_deformation(all, &BalanceParams::default());
        assert_eq!(out.len(), 5 + 3);
    }
}
