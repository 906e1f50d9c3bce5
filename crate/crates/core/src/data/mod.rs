//! Image datasets: IDX and CIFAR-10 binary loaders, a synthetic pattern
//! set, augmentation and normalisation.

mod cifar;
mod idx;
mod synthetic;
mod transform;

pub use cifar::{load_cifar10_binary, parse_cifar10_binary, CIFAR_RECORD};
pub use idx::{load_idx, parse_idx};
pub use synthetic::{synthetic_shapes, synthetic_shapes_with, SyntheticOptions};
pub use transform::{augment, denormalize, normalize, ChannelStats};

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// `u8` images stored `[N, C, H, W]` with one label each.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImageSet {
    pub images: Vec<u8>,
    pub labels: Vec<usize>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub split: Split,
}

/// A gathered minibatch, still as raw pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBatch {
    pub pixels: Vec<u8>,
    pub labels: Vec<usize>,
    /// `[N, C, H, W]`.
    pub dims: [usize; 4],
}

impl LabeledImageSet {
    /// Checks sizes and labels.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        images: Vec<u8>,
        labels: Vec<usize>,
        channels: usize,
        height: usize,
        width: usize,
        num_classes: usize,
        split: Split,
    ) -> Result<Self> {
        let per = channels * height * width;
        if per == 0 || images.len() != labels.len() * per {
            return Err(Error::Config(format!(
                "{} pixel bytes do not hold {} images of {channels}x{height}x{width}",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: num_classes,
            });
        }
        Ok(Self {
            images,
            labels,
            channels,
            height,
            width,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.image_len();
        &self.images[i * n..(i + 1) * n]
    }

    pub fn batch(&self, indices: &[usize]) -> ImageBatch {
        let mut pixels = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            pixels.extend_from_slice(self.image(i));
        }
        ImageBatch {
            pixels,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            dims: [indices.len(), self.channels, self.height, self.width],
        }
    }

    /// Subset in the given order.
    pub fn select(&self, indices: &[usize], split: Split) -> Self {
        let b = self.batch(indices);
        Self {
            images: b.pixels,
            labels: b.labels,
            split,
            ..self.clone()
        }
    }

    /// Seeded shuffle, then the first `train_fraction` for training and the
    /// rest for validation.
    pub fn split_train_val(&self, train_fraction: f64, seed: u64) -> (Self, Self) {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let cut = (self.len() as f64 * train_fraction).round() as usize;
        (
            self.select(&order[..cut], Split::Train),
            self.select(&order[cut..], Split::Val),
        )
    }

    /// First `per_class` images of every class, in dataset order.
    pub fn take_per_class(&self, per_class: usize) -> Self {
        let mut seen = vec![0usize; self.num_classes];
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| {
                let c = &mut seen[self.labels[i]];
                *c += 1;
                *c <= per_class
            })
            .collect();
        self.select(&keep, self.split)
    }

    /// Halves both spatial sides by averaging 2×2 blocks (rounded).
    pub fn downsample2(&self) -> Self {
        let (h, w) = (self.height / 2, self.width / 2);
        let mut images = Vec::with_capacity(self.len() * self.channels * h * w);
        for plane in self.images.chunks(self.height * self.width) {
            for y in 0..h {
                for x in 0..w {
                    let at = |dy: usize, dx: usize| u32::from(plane[(2 * y + dy) * self.width + 2 * x + dx]);
                    let sum = at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1);
                    images.push(((sum + 2) / 4) as u8);
                }
            }
        }
        Self {
            images,
            height: h,
            width: w,
            ..self.clone()
        }
    }

    /// Images per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
    Synthetic,
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(Self::Mnist),
            "cifar10" => Ok(Self::Cifar10),
            "synthetic" => Ok(Self::Synthetic),
            _ => Err(Error::Config(format!(
                "unknown dataset {s:?} (mnist, cifar10, synthetic)"
            ))),
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mnist => "mnist",
            Self::Cifar10 => "cifar10",
            Self::Synthetic => "synthetic",
        })
    }
}

/// Number of synthetic samples generated before the 80/20 split.
pub const SYNTHETIC_SIZE: usize = 1000;

impl DatasetKind {
    /// Train and evaluation sets. MNIST and CIFAR-10 use their native
    /// splits from `dir`; the synthetic set is generated for a
    /// `channels × size × size` input and split 80/20 with `seed`.
    pub fn load(
        self,
        dir: &Path,
        channels: usize,
        size: usize,
        seed: u64,
    ) -> Result<(LabeledImageSet, LabeledImageSet)> {
        match self {
            Self::Mnist => {
                let find = |stem: &str| {
                    [format!("{stem}-idx3-ubyte"), format!("{stem}.idx3-ubyte")]
                        .into_iter()
                        .map(|n| dir.join(n))
                        .find(|p| p.exists())
                        .unwrap_or_else(|| dir.join(format!("{stem}-idx3-ubyte")))
                };
                let labels = |stem: &str| {
                    [format!("{stem}-idx1-ubyte"), format!("{stem}.idx1-ubyte")]
                        .into_iter()
                        .map(|n| dir.join(n))
                        .find(|p| p.exists())
                        .unwrap_or_else(|| dir.join(format!("{stem}-idx1-ubyte")))
                };
                let mut train = load_idx(&find("train-images"), &labels("train-labels"))?;
                let mut test = load_idx(&find("t10k-images"), &labels("t10k-labels"))?;
                train.split = Split::Train;
                test.split = Split::Test;
                Ok((train, test))
            }
            Self::Cifar10 => {
                let base = if dir.join("cifar-10-batches-bin").is_dir() {
                    dir.join("cifar-10-batches-bin")
                } else {
                    dir.to_path_buf()
                };
                let train_paths: Vec<_> = (1..=5)
                    .map(|i| base.join(format!("data_batch_{i}.bin")))
                    .collect();
                let mut train = load_cifar10_binary(&train_paths)?;
                let mut test = load_cifar10_binary(&[base.join("test_batch.bin")])?;
                train.split = Split::Train;
                test.split = Split::Test;
                Ok((train, test))
            }
            Self::Synthetic => {
                let opts = SyntheticOptions {
                    channels,
                    ..SyntheticOptions::default()
                };
                let all = synthetic_shapes_with(SYNTHETIC_SIZE, 4, size, seed, &opts)?;
                Ok(all.split_train_val(0.8, seed))
            }
        }
    }
}
