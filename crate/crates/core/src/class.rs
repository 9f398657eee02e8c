//! The seven-class tissue taxonomy and the annotation sentinel.

use serde::{Deserialize, Serialize};

use crate::error::{DialError, Result};

/// Number of predicted classes.
pub const NUM_CLASSES: usize = 7;

/// Mask value for pixels nobody has annotated.
pub const UNLABELED: u8 = 255;

/// Per-class pixel counts, indexed by [`ClassId::index`].
pub type ClassCounts = [u64; NUM_CLASSES];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum ClassId {
    ViableTumor = 0,
    NecrosisWithBone = 1,
    NecrosisWithoutBone = 2,
    NormalBone = 3,
    NormalTissue = 4,
    Cartilage = 5,
    Blank = 6,
}

impl ClassId {
    pub const ALL: [ClassId; NUM_CLASSES] = [
        ClassId::ViableTumor,
        ClassId::NecrosisWithBone,
        ClassId::NecrosisWithoutBone,
        ClassId::NormalBone,
        ClassId::NormalTissue,
        ClassId::Cartilage,
        ClassId::Blank,
    ];

    pub fn from_u8(value: u8) -> Option<ClassId> {
        Self::ALL.get(value as usize).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassId::ViableTumor => "viable_tumor",
            ClassId::NecrosisWithBone => "necrosis_with_bone",
            ClassId::NecrosisWithoutBone => "necrosis_without_bone",
            ClassId::NormalBone => "normal_bone",
            ClassId::NormalTissue => "normal_tissue",
            ClassId::Cartilage => "cartilage",
            ClassId::Blank => "blank",
        }
    }

    /// Necrotic tumor is the union of both necrosis classes.
    pub fn is_necrosis(self) -> bool {
        matches!(
            self,
            ClassId::NecrosisWithBone | ClassId::NecrosisWithoutBone
        )
    }
}

impl std::fmt::Display for ClassId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Accepts a class index or [`UNLABELED`]; rejects anything else.
pub fn check_mask_value(value: u8) -> Result<()> {
    if (value as usize) < NUM_CLASSES || value == UNLABELED {
        Ok(())
    } else {
        Err(DialError::InvalidLabel(value))
    }
}

/// Display colors: red, blue, yellow, green, orange, brown, gray.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Palette(pub [[u8; 3]; NUM_CLASSES]);

impl Default for Palette {
    fn default() -> Self {
        Palette([
            [220, 30, 30],
            [30, 60, 220],
            [240, 220, 30],
            [40, 170, 60],
            [250, 140, 20],
            [140, 80, 30],
            [128, 128, 128],
        ])
    }
}

impl Palette {
    pub fn color(&self, class: u8) -> Result<[u8; 3]> {
        self.0
            .get(class as usize)
            .copied()
            .ok_or(DialError::InvalidLabel(class))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_values() {
        for v in 0..=6u8 {
            assert!(check_mask_value(v).is_ok());
        }
        assert!(check_mask_value(UNLABELED).is_ok());
        assert!(matches!(
            check_mask_value(7),
            Err(DialError::InvalidLabel(7))
        ));
        assert!(check_mask_value(254).is_err());
    }

    #[test]
    fn necrosis_classes() {
        let necrotic: Vec<_> = ClassId::ALL.iter().filter(|c| c.is_necrosis()).collect();
        assert_eq!(
            necrotic,
            [&ClassId::NecrosisWithBone, &ClassId::NecrosisWithoutBone]
        );
        assert_eq!(ClassId::from_u8(6), Some(ClassId::Blank));
        assert_eq!(ClassId::from_u8(UNLABELED), None);
    }
}
