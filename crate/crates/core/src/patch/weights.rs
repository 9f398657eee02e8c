use serde::{Deserialize, Serialize};

use crate::class::{ClassCounts, NUM_CLASSES};
use crate::error::{DialError, Result};

/// Per-class loss weights `w_c = 1 − p_c / Σ p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights(pub [f64; NUM_CLASSES]);

impl LossWeights {
    pub fn uniform() -> Self {
        LossWeights([1.0; NUM_CLASSES])
    }

    pub fn get(&self, class: usize) -> f64 {
        self.0[class]
    }
}

pub fn compute_weights(counts: &ClassCounts) -> Result<LossWeights> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(DialError::ZeroCounts);
    }
    let mut w = [0.0; NUM_CLASSES];
    for (wc, &pc) in w.iter_mut().zip(counts) {
        *wc = 1.0 - pc as f64 / total as f64;
    }
    Ok(LossWeights(w))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_counts() {
        let w = compute_weights(&[5; 7]).unwrap();
        for v in w.0 {
            assert!((v - 6.0 / 7.0).abs() < 1e-15);
        }
    }

    #[test]
    fn single_class() {
        let w = compute_weights(&[100, 0, 0, 0, 0, 0, 0]).unwrap();
        assert_eq!(w.0, [0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn mixed() {
        let w = compute_weights(&[50, 25, 25, 0, 0, 0, 0]).unwrap();
        assert_eq!(w.0, [0.5, 0.75, 0.75, 1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn all_zero_is_an_error() {
        assert!(matches!(
            compute_weights(&[0; 7]),
            Err(DialError::ZeroCounts)
        ));
    }
}
