//! Sub-network evaluation, residual-magnitude profiles and Pareto reports.

mod report;

pub use report::{
    pareto_report, read_subnets_csv, write_profile_csv, write_subnets_csv, ParetoRecord,
    ProfileRow, SubnetRecord,
};

use crate::adaptive::{enumerate_subnets, AdaptiveDepthNetwork, ParamScope, SkipConfig};
use crate::autodiff::{Tape, Tensor};
use crate::data::{normalize, ChannelStats, LabeledImageSet};
use crate::error::{Error, Result};

/// Batch size used by evaluation helpers.
pub const EVAL_BATCH: usize = 256;

/// A normalised image set held as one `[N, C, H, W]` tensor.
#[derive(Clone, Debug)]
pub struct TensorDataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl TensorDataset {
    pub fn from_set(set: &LabeledImageSet, stats: &ChannelStats) -> Result<Self> {
        if set.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let all: Vec<usize> = (0..set.len()).collect();
        Ok(Self {
            images: normalize(&set.batch(&all), stats)?,
            labels: set.labels.clone(),
            num_classes: set.num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Samples `start..end` as a tensor and their labels.
    pub fn slice(&self, start: usize, end: usize) -> (Tensor, &[usize]) {
        let shape = self.images.shape();
        let per: usize = shape[1..].iter().product();
        let mut dims = shape.to_vec();
        dims[0] = end - start;
        let data = self.images.data()[start * per..end * per].to_vec();
        (Tensor::new(&dims, data).expect("slice within bounds"), &self.labels[start..end])
    }

    /// `(start, end)` ranges of consecutive batches.
    pub fn batches(&self, batch: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.len())
            .step_by(batch.max(1))
            .map(move |s| (s, (s + batch.max(1)).min(self.len())))
    }
}

/// Row-wise argmax; ties go to the lowest index.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let c = logits.shape()[1];
    logits
        .data()
        .chunks(c)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Top-1 accuracy of sub-network `skip`, using running statistics.
pub fn evaluate(net: &mut AdaptiveDepthNetwork, skip: &SkipConfig, data: &TensorDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    skip.check_len(net.num_stages())?;
    let mut correct = 0usize;
    for (s, e) in data.batches(EVAL_BATCH) {
        let (x, labels) = data.slice(s, e);
        let mut tape = Tape::inference();
        let x = tape.input(x);
        let out = net.forward(&mut tape, x, skip, false)?;
        correct += argmax_rows(tape.value(out.logits))
            .iter()
            .zip(labels)
            .filter(|(p, l)| p == l)
            .count();
    }
    Ok(correct as f64 / data.len() as f64)
}

/// One record per sub-network, in enumeration order.
pub fn evaluate_all(net: &mut AdaptiveDepthNetwork, data: &TensorDataset) -> Result<Vec<SubnetRecord>> {
    enumerate_subnets(net.num_stages())
        .into_iter()
        .map(|skip| {
            Ok(SubnetRecord {
                flops: net.flops(&skip)?,
                params: net.param_count(ParamScope::Config(&skip))?,
                top1: evaluate(net, &skip, data)?,
                skip,
            })
        })
        .collect()
}

/// Mean `‖F(h)‖₂ / ‖shortcut(h)‖₂` of one residual block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockRatio {
    pub stage: usize,
    pub block: usize,
    pub skippable: bool,
    pub ratio: f64,
    /// Samples that entered the mean.
    pub samples: usize,
    /// Samples left out because the shortcut norm was below `1e-12`.
    pub degenerate: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockProfile {
    pub skip: SkipConfig,
    pub blocks: Vec<BlockRatio>,
}

impl BlockProfile {
    /// Unweighted mean of the per-block ratios of one kind.
    pub fn mean_ratio(&self, skippable: bool) -> Option<f64> {
        let r: Vec<f64> = self
            .blocks
            .iter()
            .filter(|b| b.skippable == skippable && b.samples > 0)
            .map(|b| b.ratio)
            .collect();
        (!r.is_empty()).then(|| r.iter().sum::<f64>() / r.len() as f64)
    }
}

const MIN_NORM: f64 = 1e-12;

/// Residual-magnitude profile of every block executed by `skip`.
///
/// For each sample, `F(h)` is recovered as block output minus shortcut and
/// both norms run over all non-batch elements. The per-block value is the
/// mean over samples. At most `max_batches` batches are used.
pub fn residual_profile(
    net: &mut AdaptiveDepthNetwork,
    skip: &SkipConfig,
    data: &TensorDataset,
    max_batches: usize,
) -> Result<BlockProfile> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    skip.check_len(net.num_stages())?;
    let mut sums: Vec<(crate::adaptive::BlockSite, f64, usize, usize)> = Vec::new();
    for (s, e) in data.batches(EVAL_BATCH).take(max_batches.max(1)) {
        let (x, _) = data.slice(s, e);
        let mut tape = Tape::inference();
        let x = tape.input(x);
        let mut k = 0;
        net.forward_probed(&mut tape, x, skip, false, &mut |site, tape, out| {
            if sums.len() <= k {
                sums.push((site, 0.0, 0, 0));
            }
            let out_v = tape.value(out.out);
            let sc = tape.value(out.shortcut);
            for i in 0..out_v.batch() {
                let (o, h) = (out_v.sample(i), sc.sample(i));
                let h_norm = h.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
                if h_norm < MIN_NORM {
                    sums[k].3 += 1;
                    continue;
                }
                let f_norm = o
                    .iter()
                    .zip(h)
                    .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
                    .sum::<f64>()
                    .sqrt();
                sums[k].1 += f_norm / h_norm;
                sums[k].2 += 1;
            }
            k += 1;
        })?;
    }
    let blocks = sums
        .into_iter()
        .map(|(site, sum, n, bad)| BlockRatio {
            stage: site.stage,
            block: site.block,
            skippable: site.skippable,
            ratio: if n > 0 { sum / n as f64 } else { 0.0 },
            samples: n,
            degenerate: bad,
        })
        .collect();
    Ok(BlockProfile {
        skip: skip.clone(),
        blocks,
    })
}
