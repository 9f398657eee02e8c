use serde::{Deserialize, Serialize};

use crate::class::{NUM_CLASSES, UNLABELED};
use crate::error::{DialError, Result};
use crate::raster::LabelRaster;

/// Per-class intersection and union tallies over labeled target pixels,
/// accumulated across any number of prediction/target pairs.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IouAccumulator {
    pub intersection: [u64; NUM_CLASSES],
    pub union: [u64; NUM_CLASSES],
    pub present: [u64; NUM_CLASSES],
}

impl IouAccumulator {
    pub fn add(&mut self, pred: &LabelRaster, target: &LabelRaster) -> Result<()> {
        if pred.dims() != target.dims() {
            return Err(DialError::DimensionMismatch {
                expected: target.dims(),
                actual: pred.dims(),
            });
        }
        for (&p, &t) in pred.as_raw().iter().zip(target.as_raw()) {
            if t == UNLABELED {
                continue;
            }
            let (p, t) = (p as usize, t as usize);
            if p >= NUM_CLASSES {
                return Err(DialError::InvalidLabel(p as u8));
            }
            self.present[t] += 1;
            if p == t {
                self.intersection[t] += 1;
                self.union[t] += 1;
            } else {
                self.union[t] += 1;
                self.union[p] += 1;
            }
        }
        Ok(())
    }

    /// Mean IoU over classes that occur in the targets.
    pub fn miou(&self) -> Result<f64> {
        let mut sum = 0.0;
        let mut k = 0;
        for c in 0..NUM_CLASSES {
            if self.present[c] > 0 {
                sum += self.intersection[c] as f64 / self.union[c] as f64;
                k += 1;
            }
        }
        if k == 0 {
            return Err(DialError::NoLabeledPixels);
        }
        Ok(sum / k as f64)
    }
}

pub fn miou(pred: &LabelRaster, target: &LabelRaster) -> Result<f64> {
    let mut acc = IouAccumulator::default();
    acc.add(pred, target)?;
    acc.miou()
}
