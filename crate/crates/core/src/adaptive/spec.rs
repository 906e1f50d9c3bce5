use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a ResNet stage of `L` blocks is split into mandatory and skippable
/// blocks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRatio {
    /// `ceil(L/2)` mandatory, `floor(L/2)` skippable.
    #[default]
    Default,
    /// `max(1, floor(L/3))` mandatory, the rest skippable.
    MoreSkippable,
    /// `floor(L/3)` skippable, the rest mandatory.
    MoreMandatory,
}

impl SplitRatio {
    /// `(mandatory, skippable)` for a stage of `blocks` blocks.
    pub fn split(self, blocks: usize) -> Result<(usize, usize)> {
        let mandatory = match self {
            SplitRatio::Default => blocks.div_ceil(2),
            SplitRatio::MoreSkippable => (blocks / 3).max(1),
            SplitRatio::MoreMandatory => blocks - blocks / 3,
        };
        if mandatory == 0 || mandatory > blocks {
            return Err(Error::Config(format!(
                "a stage of {blocks} blocks leaves no mandatory block"
            )));
        }
        Ok((mandatory, blocks - mandatory))
    }
}

impl FromStr for SplitRatio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(Self::Default),
            "more_skippable" => Ok(Self::MoreSkippable),
            "more_mandatory" => Ok(Self::MoreMandatory),
            _ => Err(Error::Config(format!(
                "unknown ratio {s:?} (default, more_skippable, more_mandatory)"
            ))),
        }
    }
}

impl fmt::Display for SplitRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Default => "default",
            Self::MoreSkippable => "more_skippable",
            Self::MoreMandatory => "more_mandatory",
        })
    }
}

/// Skippable blocks at the end of each ViT group.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VitSplit {
    #[default]
    LastOne,
    LastTwo,
}

impl VitSplit {
    pub fn split(self, group: usize) -> Result<(usize, usize)> {
        let skippable = match self {
            VitSplit::LastOne => 1,
            VitSplit::LastTwo => 2,
        };
        if group <= skippable {
            return Err(Error::Config(format!(
                "a group of {group} encoder blocks leaves no mandatory block"
            )));
        }
        Ok((group - skippable, skippable))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Architecture {
    Resnet {
        stem_width: usize,
        stage_blocks: Vec<usize>,
        widths: Vec<usize>,
        ratio: SplitRatio,
    },
    Vit {
        depth: usize,
        dim: usize,
        heads: usize,
        patch: usize,
        groups: usize,
        mlp_hidden: usize,
        split: VitSplit,
    },
}

/// Everything needed to rebuild a network's structure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Architecture,
    pub in_channels: usize,
    /// Square input side.
    pub image_size: usize,
    pub num_classes: usize,
    /// `false` gives every norm a single set (the vanilla twin and the
    /// ablation without skip-aware norms).
    pub switchable_norms: bool,
}

impl ModelSpec {
    /// Four stages of `[3,4,6,3]` basic blocks at widths `[16,32,64,128]`
    /// on 32×32 RGB input.
    pub fn resnet_tiny(num_classes: usize) -> Self {
        Self {
            arch: Architecture::Resnet {
                stem_width: 16,
                stage_blocks: vec![3, 4, 6, 3],
                widths: vec![16, 32, 64, 128],
                ratio: SplitRatio::Default,
            },
            in_channels: 3,
            image_size: 32,
            num_classes,
            switchable_norms: true,
        }
    }

    /// Patch 7 on 28×28 grey input, dim 64, 4 heads, depth 8 in 4 groups.
    pub fn vit_tiny(num_classes: usize) -> Self {
        Self {
            arch: Architecture::Vit {
                depth: 8,
                dim: 64,
                heads: 4,
                patch: 7,
                groups: 4,
                mlp_hidden: 128,
                split: VitSplit::LastOne,
            },
            in_channels: 1,
            image_size: 28,
            num_classes,
            switchable_norms: true,
        }
    }

    pub fn with_input(mut self, in_channels: usize, image_size: usize) -> Self {
        self.in_channels = in_channels;
        self.image_size = image_size;
        self
    }

    pub fn with_switchable_norms(mut self, on: bool) -> Self {
        self.switchable_norms = on;
        self
    }

    /// Replaces the split rule of either family. ViT maps `more_skippable`
    /// to two skippable blocks per group.
    pub fn with_ratio(mut self, r: SplitRatio) -> Self {
        match &mut self.arch {
            Architecture::Resnet { ratio, .. } => *ratio = r,
            Architecture::Vit { split, .. } => {
                *split = match r {
                    SplitRatio::MoreSkippable => VitSplit::LastTwo,
                    _ => VitSplit::LastOne,
                }
            }
        }
        self
    }

    pub fn num_stages(&self) -> usize {
        match &self.arch {
            Architecture::Resnet { stage_blocks, .. } => stage_blocks.len(),
            Architecture::Vit { groups, .. } => *groups,
        }
    }

    /// `(mandatory, skippable)` per stage.
    pub fn stage_split(&self) -> Result<Vec<(usize, usize)>> {
        self.validate()?;
        match &self.arch {
            Architecture::Resnet {
                stage_blocks,
                ratio,
                ..
            } => stage_blocks.iter().map(|&l| ratio.split(l)).collect(),
            Architecture::Vit {
                depth,
                groups,
                split,
                ..
            } => {
                let g = depth / groups;
                (0..*groups).map(|_| split.split(g)).collect()
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        if self.in_channels == 0 || self.image_size == 0 {
            return Err(Error::Config("input must be non-empty".into()));
        }
        match &self.arch {
            Architecture::Resnet {
                stem_width,
                stage_blocks,
                widths,
                ..
            } => {
                if stage_blocks.is_empty() || stage_blocks.len() != widths.len() {
                    return Err(Error::Config(format!(
                        "{} stages but {} widths",
                        stage_blocks.len(),
                        widths.len()
                    )));
                }
                if *stem_width == 0 || widths.contains(&0) || stage_blocks.contains(&0) {
                    return Err(Error::Config("widths and stage lengths must be ≥ 1".into()));
                }
            }
            Architecture::Vit {
                depth,
                dim,
                heads,
                patch,
                groups,
                mlp_hidden,
                ..
            } => {
                if *groups == 0 || depth % groups != 0 {
                    return Err(Error::Config(format!(
                        "depth {depth} is not divisible into {groups} groups"
                    )));
                }
                if *heads == 0 || dim % heads != 0 {
                    return Err(Error::Config(format!(
                        "dim {dim} is not divisible by {heads} heads"
                    )));
                }
                if *patch == 0 || self.image_size % patch != 0 {
                    return Err(Error::Config(format!(
                        "image size {} is not divisible by patch {patch}",
                        self.image_size
                    )));
                }
                if *mlp_hidden == 0 {
                    return Err(Error::Config("mlp_hidden must be ≥ 1".into()));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn splits(blocks: &[usize], r: SplitRatio) -> Vec<(usize, usize)> {
        blocks.iter().map(|&l| r.split(l).unwrap()).collect()
    }

    #[test]
    fn resnet_ratios() {
        let b = [3, 4, 6, 3];
        assert_eq!(splits(&b, SplitRatio::Default), [(2, 1), (2, 2), (3, 3), (2, 1)]);
        assert_eq!(splits(&b, SplitRatio::MoreSkippable), [(1, 2), (1, 3), (2, 4), (1, 2)]);
        assert_eq!(splits(&b, SplitRatio::MoreMandatory), [(2, 1), (3, 1), (4, 2), (2, 1)]);
        assert_eq!(splits(&[2, 2, 2, 2], SplitRatio::Default), [(1, 1); 4]);
        assert_eq!(SplitRatio::Default.split(1).unwrap(), (1, 0));
    }

    fn vit(depth: usize, split: VitSplit) -> ModelSpec {
        let mut spec = ModelSpec::vit_tiny(10);
        if let Architecture::Vit { depth: d, split: s, .. } = &mut spec.arch {
            *d = depth;
            *s = split;
        }
        spec
    }

    #[test]
    fn vit_groups() {
        assert_eq!(ModelSpec::vit_tiny(10).stage_split().unwrap(), [(1, 1); 4]);
        assert_eq!(vit(12, VitSplit::LastOne).stage_split().unwrap(), [(2, 1); 4]);
        assert_eq!(vit(12, VitSplit::LastTwo).stage_split().unwrap(), [(1, 2); 4]);
        assert!(vit(10, VitSplit::LastOne).stage_split().is_err());
        assert!(vit(8, VitSplit::LastTwo).stage_split().is_err());
    }

    #[test]
    fn parses_ratio_names() {
        for r in [
            SplitRatio::Default,
            SplitRatio::MoreSkippable,
            SplitRatio::MoreMandatory,
        ] {
            assert_eq!(r.to_string().parse::<SplitRatio>().unwrap(), r);
        }
        assert!("half".parse::<SplitRatio>().is_err());
    }

    #[test]
    fn spec_serialises() {
        let spec = ModelSpec::resnet_tiny(10);
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("\"family\":\"resnet\""));
        assert_eq!(serde_json::from_str::<ModelSpec>(&json).unwrap(), spec);
    }
}
