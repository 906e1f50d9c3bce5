#![allow(dead_code)]

use adn_core::adaptive::{AdaptiveDepthNetwork, Architecture, ModelSpec, SplitRatio};
use adn_core::autodiff::Tensor;
use adn_core::data::{normalize, synthetic_shapes, ChannelStats, LabeledImageSet};

pub const SIZE: usize = 8;
pub const CLASSES: usize = 3;

/// Four stages of two blocks on 8×8 RGB input.
pub fn micro_spec(switchable: bool) -> ModelSpec {
    ModelSpec {
        arch: Architecture::Resnet {
            stem_width: 4,
            stage_blocks: vec![2, 2, 2, 2],
            widths: vec![4, 4, 8, 8],
            ratio: SplitRatio::Default,
        },
        in_channels: 3,
        image_size: SIZE,
        num_classes: CLASSES,
        switchable_norms: switchable,
    }
}

pub fn micro_net(seed: u64) -> AdaptiveDepthNetwork {
    AdaptiveDepthNetwork::new(micro_spec(true), seed).unwrap()
}

pub fn shapes(n: usize, seed: u64) -> (LabeledImageSet, ChannelStats) {
    let set = synthetic_shapes(n, CLASSES, SIZE, seed).unwrap();
    let stats = ChannelStats::compute(&set).unwrap();
    (set, stats)
}

/// The first `n` images as a normalised batch with labels.
pub fn batch(n: usize, seed: u64) -> (Tensor, Vec<usize>) {
    let (set, stats) = shapes(n, seed);
    let b = set.batch(&(0..n).collect::<Vec<_>>());
    (normalize(&b, &stats).unwrap(), b.labels)
}

/// Every gradient in the store, by parameter name.
pub fn grads(net: &AdaptiveDepthNetwork) -> Vec<(String, Vec<f32>)> {
    net.store()
        .sorted()
        .map(|(name, e)| (name.to_string(), e.grad.clone()))
        .collect()
}

/// Every value in the store, by parameter name.
pub fn values(net: &AdaptiveDepthNetwork) -> Vec<(String, Vec<f32>)> {
    net.store()
        .sorted()
        .map(|(name, e)| (name.to_string(), e.value.data().to_vec()))
        .collect()
}
