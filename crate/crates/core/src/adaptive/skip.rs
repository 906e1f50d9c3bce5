use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Per-stage skip flags. `true` bypasses the stage's skippable blocks.
///
/// The text form writes one character per stage, `T` for skipped and `F`
/// for executed, so `FFFF` is the super-net and `TTTT` the base-net.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SkipConfig(Vec<bool>);

impl SkipConfig {
    pub fn new(flags: Vec<bool>) -> Self {
        Self(flags)
    }

    /// Every stage executes its skippable blocks.
    pub fn super_net(stages: usize) -> Self {
        Self(vec![false; stages])
    }

    /// Every skippable block is bypassed.
    pub fn base_net(stages: usize) -> Self {
        Self(vec![true; stages])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn flags(&self) -> &[bool] {
        &self.0
    }

    pub fn is_skipped(&self, stage: usize) -> bool {
        self.0[stage]
    }

    pub fn num_skipped(&self) -> usize {
        self.0.iter().filter(|&&s| s).count()
    }

    /// Norm mode for the mandatory blocks of `stage`.
    pub fn norm_mode(&self, stage: usize) -> usize {
        usize::from(self.0[stage])
    }

    /// Errors unless there is one flag per stage.
    pub fn check_len(&self, stages: usize) -> Result<()> {
        if self.0.len() != stages {
            return Err(Error::SkipLength {
                expected: stages,
                got: self.0.len(),
            });
        }
        Ok(())
    }

    /// Parses and checks the length in one go.
    pub fn parse_for(s: &str, stages: usize) -> Result<Self> {
        let cfg: Self = s.parse()?;
        cfg.check_len(stages)?;
        Ok(cfg)
    }
}

impl FromStr for SkipConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.is_empty() {
            return Err(Error::SkipParse(String::new()));
        }
        s.chars()
            .map(|c| match c {
                'T' | 't' => Ok(true),
                'F' | 'f' => Ok(false),
                _ => Err(Error::SkipParse(s.to_string())),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }
}

impl fmt::Display for SkipConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &s in &self.0 {
            f.write_str(if s { "T" } else { "F" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for SkipConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SkipConfig({self})")
    }
}

impl Serialize for SkipConfig {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SkipConfig {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// All `2^n` skip configurations, grouped by how many stages are skipped
/// (fewest first). Within a group, configurations whose skipped stages come
/// earlier are listed first: `TFFF, FTFF, FFTF, FFFT`.
pub fn enumerate_subnets(stages: usize) -> Vec<SkipConfig> {
    assert!(stages >= 1 && stages < usize::BITS as usize);
    let mut configs: Vec<(usize, Vec<usize>, SkipConfig)> = (0..1usize << stages)
        .map(|mask| {
            let flags: Vec<bool> = (0..stages).map(|s| mask >> s & 1 == 1).collect();
            let skipped: Vec<usize> = (0..stages).filter(|&s| flags[s]).collect();
            (skipped.len(), skipped, SkipConfig(flags))
        })
        .collect();
    configs.sort_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)));
    configs.into_iter().map(|c| c.2).collect()
}
