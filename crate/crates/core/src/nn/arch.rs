use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// Shape of the residual encoder: a 3×3 stem conv (C0) followed by
/// `num_groups` groups of pre-activation residual blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub in_channels: usize,
    pub c0_channels: usize,
    pub num_groups: usize,
    pub blocks_per_group: usize,
    pub group_widths: Vec<usize>,
    pub num_classes: usize,
    pub num_rotation_classes: usize,
    pub norm_groups: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            in_channels: 3,
            c0_channels: 8,
            num_groups: 4,
            blocks_per_group: 1,
            group_widths: vec![8, 16, 16, 32],
            num_classes: 4,
            num_rotation_classes: 4,
            norm_groups: 4,
        }
    }
}

impl ArchConfig {
    /// Widths [4,4,4,4], one block per group; used for full-model gradient checks.
    pub fn tiny() -> Self {
        ArchConfig { c0_channels: 4, group_widths: vec![4, 4, 4, 4], norm_groups: 1, ..Self::default() }
    }

    /// Layout of the 26-layer encoder: four groups of four blocks.
    pub fn resnet26(num_classes: usize) -> Self {
        ArchConfig {
            c0_channels: 16,
            blocks_per_group: 4,
            group_widths: vec![16, 32, 64, 128],
            num_classes,
            norm_groups: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.group_widths.len() != self.num_groups {
            return Err(contract(format!(
                "arch: {} group widths for {} groups",
                self.group_widths.len(),
                self.num_groups
            )));
        }
        let counts = [
            ("in_channels", self.in_channels),
            ("c0_channels", self.c0_channels),
            ("num_groups", self.num_groups),
            ("blocks_per_group", self.blocks_per_group),
            ("num_classes", self.num_classes),
            ("norm_groups", self.norm_groups),
        ];
        if let Some((key, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(contract(format!("arch: {key} must be positive")));
        }
        if self.num_rotation_classes != 4 {
            return Err(contract("arch: num_rotation_classes must be 4"));
        }
        for &w in std::iter::once(&self.c0_channels).chain(&self.group_widths) {
            if w == 0 || w % self.norm_groups != 0 {
                return Err(contract(format!("arch: width {w} not divisible by norm_groups {}", self.norm_groups)));
            }
        }
        Ok(())
    }

    /// Spatial stride of the first block in `group`.
    pub fn group_stride(&self, group: usize) -> usize {
        if group == 0 {
            1
        } else {
            2
        }
    }

    pub fn feature_width(&self) -> usize {
        *self.group_widths.last().expect("validated arch has groups")
    }
}
