use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use adn_core::adaptive::{Architecture, ModelSpec, SplitRatio};
use adn_core::data::DatasetKind;
use adn_core::training::TrainRecipe;
use adn_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelName {
    ResnetTiny,
    VitTiny,
}

impl FromStr for ModelName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "resnet_tiny" => Ok(Self::ResnetTiny),
            "vit_tiny" => Ok(Self::VitTiny),
            _ => Err(Error::Config(format!("unknown model {s:?} (resnet_tiny, vit_tiny)"))),
        }
    }
}

impl fmt::Display for ModelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ResnetTiny => "resnet_tiny",
            Self::VitTiny => "vit_tiny",
        })
    }
}

/// Everything one command needs, echoed into the run manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelName,
    pub dataset: DatasetKind,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub ratio: SplitRatio,
    pub switchable_norms: bool,
    /// Keep only the first `n` training images.
    pub max_train_samples: Option<usize>,
    /// Keep only the first `n` evaluation images.
    pub max_eval_samples: Option<usize>,
    pub recipe: TrainRecipe,
}

impl RunConfig {
    fn defaults(dataset: DatasetKind) -> Self {
        Self {
            model: ModelName::ResnetTiny,
            dataset,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs"),
            ratio: SplitRatio::Default,
            switchable_norms: true,
            max_train_samples: None,
            max_eval_samples: None,
            recipe: match dataset {
                DatasetKind::Mnist => TrainRecipe::mnist(),
                _ => TrainRecipe::default(),
            },
        }
    }

    /// Defaults, then `pairs` in order; later pairs win. The last `dataset`
    /// pair picks the default recipe.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let dataset = match pairs.iter().rev().find(|(k, _)| k == "dataset") {
            Some((_, v)) => v.parse()?,
            None => DatasetKind::Synthetic,
        };
        let mut cfg = Self::defaults(dataset);
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        cfg.recipe.validate()?;
        cfg.spec()?.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let count = |v: &str| -> Result<usize> {
            v.parse()
                .map_err(|_| Error::Config(format!("invalid value {v:?} for {key}")))
        };
        match key {
            "model" => self.model = value.parse()?,
            "dataset" => self.dataset = value.parse()?,
            "data_dir" => self.data_dir = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "ratio" => self.ratio = value.parse()?,
            "switchable_norms" => {
                self.switchable_norms = value
                    .parse()
                    .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))?
            }
            "max_train_samples" => self.max_train_samples = Some(count(value)?),
            "max_eval_samples" => self.max_eval_samples = Some(count(value)?),
            _ => self.recipe.set(key, value)?,
        }
        Ok(())
    }

    /// Channels, image size and class count of the dataset.
    pub fn input(&self) -> (usize, usize, usize) {
        match (self.dataset, self.model) {
            (DatasetKind::Mnist, _) => (1, 28, 10),
            (DatasetKind::Cifar10, _) => (3, 32, 10),
            (DatasetKind::Synthetic, ModelName::ResnetTiny) => (3, 32, 4),
            (DatasetKind::Synthetic, ModelName::VitTiny) => (1, 28, 4),
        }
    }

    pub fn spec(&self) -> Result<ModelSpec> {
        let (c, size, classes) = self.input();
        let base = match self.model {
            ModelName::ResnetTiny => ModelSpec::resnet_tiny(classes),
            ModelName::VitTiny => ModelSpec::vit_tiny(classes),
        };
        let mut spec = base
            .with_input(c, size)
            .with_ratio(self.ratio)
            .with_switchable_norms(self.switchable_norms);
        if let Architecture::Vit { patch, .. } = &mut spec.arch {
            if size % *patch != 0 {
                *patch = 4;
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// `key = value` lines; `#` starts a comment.
pub fn parse_config_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    parse_config_text(&text).map_err(|msg| Error::Config(format!("{}: {msg}", path.display())))
}

pub fn parse_config_text(text: &str) -> std::result::Result<Vec<(String, String)>, String> {
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key = value", i + 1))?;
        pairs.push((k.trim().replace('-', "_"), v.trim().to_string()));
    }
    Ok(pairs)
}
