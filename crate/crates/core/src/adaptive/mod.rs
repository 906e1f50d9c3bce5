//! Adaptive depth network assembly, sub-network selection and cost
//! accounting.

mod checkpoint;
mod skip;
mod spec;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint};
pub use skip::{enumerate_subnets, SkipConfig};
pub use spec::{Architecture, ModelSpec, SplitRatio, VitSplit};

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{
    BasicBlock, BlockOutput, Conv2d, EncoderBlock, Linear, NormKind, ResidualBlock, SwitchableNorm,
};
use crate::params::{ParamId, ParamKind, ParamStore};

const TOKEN_INIT_STD: f32 = 0.02;

/// Mandatory prefix and skippable suffix of one stage.
#[derive(Clone, Debug)]
pub struct ResidualStage {
    pub mandatory: Vec<ResidualBlock>,
    pub skippable: Vec<ResidualBlock>,
}

impl ResidualStage {
    /// Blocks in execution order, labelled as belonging to `stage`.
    pub fn blocks(&self, stage: usize) -> impl Iterator<Item = (BlockSite, &ResidualBlock)> {
        let m = self.mandatory.len();
        self.mandatory
            .iter()
            .chain(&self.skippable)
            .enumerate()
            .map(move |(i, b)| {
                let site = BlockSite {
                    stage,
                    block: i,
                    skippable: i >= m,
                };
                (site, b)
            })
    }
}

/// Position of a residual block inside the network. `block` counts from the
/// start of the stage, mandatory blocks first.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockSite {
    pub stage: usize,
    pub block: usize,
    pub skippable: bool,
}

#[derive(Clone, Debug)]
enum Stem {
    Conv {
        conv: Conv2d,
        norm: SwitchableNorm,
    },
    Patch {
        patch: usize,
        proj: Linear,
        cls: ParamId,
        pos: ParamId,
    },
}

#[derive(Clone, Debug)]
enum Head {
    Pool { fc: Linear },
    Token { norm: SwitchableNorm, fc: Linear },
}

/// Stage outputs actually produced under one skip configuration.
#[derive(Clone, Debug)]
pub struct StageFeatures(pub Vec<Var>);

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub logits: Var,
    pub features: StageFeatures,
}

/// Which parameters [`AdaptiveDepthNetwork::param_count`] counts.
#[derive(Clone, Debug)]
pub enum ParamScope<'a> {
    /// Every trainable tensor, both norm sets included.
    Whole,
    /// Tensors executed by one sub-network, with its selected norm sets.
    Config(&'a SkipConfig),
}

/// A residual network whose stages can each drop their skippable blocks.
#[derive(Clone, Debug)]
pub struct AdaptiveDepthNetwork {
    spec: ModelSpec,
    store: ParamStore,
    stem: Stem,
    stages: Vec<ResidualStage>,
    head: Head,
}

impl AdaptiveDepthNetwork {
    /// Builds and initialises a network; all weights come from `seed`.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        let split = spec.stage_split()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let switchable = spec.switchable_norms;
        let (stem, stages, head) = match &spec.arch {
            Architecture::Resnet {
                stem_width,
                widths,
                ..
            } => {
                let conv = Conv2d::new(
                    &mut store,
                    "stem.conv",
                    spec.in_channels,
                    *stem_width,
                    3,
                    1,
                    1,
                    false,
                    &mut rng,
                );
                let norm = SwitchableNorm::plain(
                    &mut store,
                    "stem.norm",
                    NormKind::BatchNorm2d,
                    *stem_width,
                );
                let mut in_ch = *stem_width;
                let mut stages = Vec::with_capacity(widths.len());
                for (s, (&width, &(m, k))) in widths.iter().zip(&split).enumerate() {
                    let mut blocks = Vec::with_capacity(m + k);
                    for b in 0..m + k {
                        let stride = if s > 0 && b == 0 { 2 } else { 1 };
                        let block = BasicBlock::new(
                            &mut store,
                            &format!("stage{s}.block{b}"),
                            in_ch,
                            width,
                            stride,
                            switchable && b < m,
                            &mut rng,
                        );
                        in_ch = width;
                        blocks.push(ResidualBlock::Basic(block));
                    }
                    let skippable = blocks.split_off(m);
                    stages.push(ResidualStage {
                        mandatory: blocks,
                        skippable,
                    });
                }
                let fc_std = 1.0 / (in_ch as f32).sqrt();
                let fc = Linear::new(&mut store, "head.fc", in_ch, spec.num_classes, fc_std, &mut rng);
                (Stem::Conv { conv, norm }, stages, Head::Pool { fc })
            }
            Architecture::Vit {
                dim,
                heads,
                patch,
                mlp_hidden,
                ..
            } => {
                let tokens = (spec.image_size / patch).pow(2);
                let patch_dim = spec.in_channels * patch * patch;
                let proj = Linear::new(&mut store, "stem.proj", patch_dim, *dim, TOKEN_INIT_STD, &mut rng);
                let cls = store.add(
                    "stem.cls",
                    Tensor::randn(&[*dim], TOKEN_INIT_STD, &mut rng),
                    ParamKind::NoDecay,
                );
                let pos = store.add(
                    "stem.pos",
                    Tensor::randn(&[tokens + 1, *dim], TOKEN_INIT_STD, &mut rng),
                    ParamKind::NoDecay,
                );
                let mut stages = Vec::with_capacity(split.len());
                for (s, &(m, k)) in split.iter().enumerate() {
                    let mut blocks = Vec::with_capacity(m + k);
                    for b in 0..m + k {
                        let block = EncoderBlock::new(
                            &mut store,
                            &format!("stage{s}.block{b}"),
                            *dim,
                            *heads,
                            *mlp_hidden,
                            switchable && b < m,
                            &mut rng,
                        )?;
                        blocks.push(ResidualBlock::Encoder(block));
                    }
                    let skippable = blocks.split_off(m);
                    stages.push(ResidualStage {
                        mandatory: blocks,
                        skippable,
                    });
                }
                let norm = SwitchableNorm::plain(&mut store, "head.norm", NormKind::LayerNorm, *dim);
                let fc = Linear::new(&mut store, "head.fc", *dim, spec.num_classes, TOKEN_INIT_STD, &mut rng);
                let stem = Stem::Patch {
                    patch: *patch,
                    proj,
                    cls,
                    pos,
                };
                (stem, stages, Head::Token { norm, fc })
            }
        };
        Ok(Self {
            spec,
            store,
            stem,
            stages,
            head,
        })
    }

    /// Builds from a spec and loads every tensor from an ADNW checkpoint.
    pub fn from_checkpoint(spec: ModelSpec, path: &Path) -> Result<Self> {
        let mut net = Self::new(spec, 0)?;
        net.load_weights(path)?;
        Ok(net)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn stages(&self) -> &[ResidualStage] {
        &self.stages
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    /// Per-sample input shape `[C, H, W]`.
    pub fn input_shape(&self) -> [usize; 3] {
        [self.spec.in_channels, self.spec.image_size, self.spec.image_size]
    }

    /// Every switchable norm in the network.
    pub fn switchable_norms(&self) -> Vec<&SwitchableNorm> {
        self.stages
            .iter()
            .flat_map(|s| s.mandatory.iter().chain(&s.skippable))
            .flat_map(|b| b.norms())
            .filter(|n| n.is_switchable())
            .collect()
    }

    pub fn forward(
        &mut self,
        tape: &mut Tape,
        x: Var,
        skip: &SkipConfig,
        training: bool,
    ) -> Result<ForwardOutput> {
        self.forward_probed(tape, x, skip, training, &mut |_, _, _| {})
    }

    /// Forward pass that hands every executed residual block's output and
    /// shortcut to `probe`.
    ///
    /// Mandatory blocks of stage `s` run with norm mode `skip[s]`; skippable
    /// blocks run only when `skip[s]` is false. A skipped stage passes its
    /// last mandatory output straight to the next stage.
    pub fn forward_probed(
        &mut self,
        tape: &mut Tape,
        x: Var,
        skip: &SkipConfig,
        training: bool,
        probe: &mut dyn FnMut(BlockSite, &Tape, BlockOutput),
    ) -> Result<ForwardOutput> {
        skip.check_len(self.stages.len())?;
        let expected = self.input_shape();
        let shape = tape.shape(x);
        if shape.len() != 4 || shape[1..] != expected {
            return Err(Error::invalid(
                "forward",
                format!("expected [N, {}, {}, {}], got {shape:?}", expected[0], expected[1], expected[2]),
            ));
        }
        let Self {
            store,
            stem,
            stages,
            head,
            ..
        } = self;
        let mut h = match stem {
            Stem::Conv { conv, norm } => {
                let y = conv.forward(tape, store, x)?;
                let y = norm.forward(tape, store, y, 0, training)?;
                tape.relu(y)
            }
            Stem::Patch {
                patch,
                proj,
                cls,
                pos,
            } => {
                let p = tape.patchify(x, *patch)?;
                let t = proj.forward(tape, store, p)?;
                let cls = tape.param(store, *cls);
                let t = tape.prepend_token(t, cls)?;
                let pos = tape.param(store, *pos);
                tape.add(t, pos)?
            }
        };
        let mut features = Vec::with_capacity(stages.len());
        for (s, stage) in stages.iter().enumerate() {
            let mode = skip.norm_mode(s);
            for (b, block) in stage.mandatory.iter().enumerate() {
                let out = block.forward(tape, store, h, mode, training)?;
                probe(
                    BlockSite {
                        stage: s,
                        block: b,
                        skippable: false,
                    },
                    tape,
                    out,
                );
                h = out.out;
            }
            if !skip.is_skipped(s) {
                let m = stage.mandatory.len();
                for (b, block) in stage.skippable.iter().enumerate() {
                    let out = block.forward(tape, store, h, 0, training)?;
                    probe(
                        BlockSite {
                            stage: s,
                            block: m + b,
                            skippable: true,
                        },
                        tape,
                        out,
                    );
                    h = out.out;
                }
            }
            features.push(h);
        }
        let logits = match head {
            Head::Pool { fc } => {
                let y = tape.relu(h);
                let y = tape.global_avgpool(y)?;
                fc.forward(tape, store, y)?
            }
            Head::Token { norm, fc } => {
                let y = norm.forward(tape, store, h, 0, training)?;
                let y = tape.select_token(y, 0)?;
                fc.forward(tape, store, y)?
            }
        };
        Ok(ForwardOutput {
            logits,
            features: StageFeatures(features),
        })
    }

    /// Per-sample multiply-accumulates of every executed conv, linear and
    /// attention layer, labelled by layer. Norms, activations and pooling
    /// are not counted.
    pub fn cost_breakdown(&self, skip: &SkipConfig) -> Result<Vec<(String, u64)>> {
        skip.check_len(self.stages.len())?;
        let mut rows = Vec::new();
        let mut shape: Vec<usize> = match &self.stem {
            Stem::Conv { conv, .. } => {
                let (m, out) = conv.macs(&self.input_shape())?;
                rows.push(("stem".to_string(), m));
                out
            }
            Stem::Patch { patch, proj, .. } => {
                let tokens = (self.spec.image_size / patch).pow(2);
                rows.push(("stem".to_string(), proj.macs(tokens)));
                vec![tokens + 1, proj.out_features]
            }
        };
        for (s, stage) in self.stages.iter().enumerate() {
            for (site, block) in stage.blocks(s) {
                if site.skippable && skip.is_skipped(s) {
                    continue;
                }
                let (m, out) = block.macs(&shape)?;
                rows.push((format!("stage{s}.block{}", site.block), m));
                shape = out;
            }
        }
        let fc = match &self.head {
            Head::Pool { fc } | Head::Token { fc, .. } => fc,
        };
        rows.push(("head".to_string(), fc.macs(1)));
        Ok(rows)
    }

    /// Per-sample multiply-accumulates of the sub-network `skip`.
    pub fn flops(&self, skip: &SkipConfig) -> Result<u64> {
        Ok(self.cost_breakdown(skip)?.iter().map(|r| r.1).sum())
    }

    /// Multiply-accumulates of the skippable blocks of `stage`.
    pub fn skippable_flops(&self, stage: usize) -> Result<u64> {
        let n = self.stages.len();
        let all = SkipConfig::super_net(n);
        let mut flags = vec![false; n];
        flags[stage] = true;
        Ok(self.flops(&all)? - self.flops(&SkipConfig::new(flags))?)
    }

    /// Trainable parameter count under `scope`.
    pub fn param_count(&self, scope: ParamScope) -> Result<usize> {
        let skip = match scope {
            ParamScope::Whole => return Ok(self.store.trainable_count()),
            ParamScope::Config(skip) => skip,
        };
        skip.check_len(self.stages.len())?;
        let mut ids: Vec<ParamId> = match &self.stem {
            Stem::Conv { conv, norm } => conv.params().into_iter().chain(norm.params(0)).collect(),
            Stem::Patch {
                proj, cls, pos, ..
            } => proj.params().into_iter().chain([*cls, *pos]).collect(),
        };
        for (s, stage) in self.stages.iter().enumerate() {
            for b in &stage.mandatory {
                ids.extend(b.params(skip.norm_mode(s)));
            }
            if !skip.is_skipped(s) {
                for b in &stage.skippable {
                    ids.extend(b.params(0));
                }
            }
        }
        match &self.head {
            Head::Pool { fc } => ids.extend(fc.params()),
            Head::Token { norm, fc } => {
                ids.extend(norm.params(0));
                ids.extend(fc.params());
            }
        }
        Ok(ids.iter().map(|&id| self.store.value(id).numel()).sum())
    }

    /// Trainable scalars held only by the second set of switchable norms.
    pub fn second_norm_set_params(&self) -> usize {
        self.switchable_norms()
            .iter()
            .flat_map(|n| n.params(1))
            .map(|id| self.store.value(id).numel())
            .sum()
    }

    pub fn save_weights(&self, path: &Path) -> Result<()> {
        write_checkpoint(path, &self.store)
    }

    /// Replaces every tensor with the checkpoint's. The checkpoint must name
    /// exactly this network's tensors.
    pub fn load_weights(&mut self, path: &Path) -> Result<()> {
        let tensors = read_checkpoint(path)?;
        self.assign_all(tensors)
            .map_err(|e| Error::format(path, e.to_string()))
    }

    /// Replaces every tensor from `(name, value)` pairs.
    pub fn assign_all(&mut self, tensors: Vec<(String, Tensor)>) -> Result<()> {
        if tensors.len() != self.store.len() {
            return Err(Error::Config(format!(
                "{} tensors supplied, network has {}",
                tensors.len(),
                self.store.len()
            )));
        }
        for (name, value) in tensors {
            self.store.assign(&name, value)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn micro_resnet() -> ModelSpec {
        ModelSpec {
            arch: Architecture::Resnet {
                stem_width: 4,
                stage_blocks: vec![2, 3],
                widths: vec![4, 8],
                ratio: SplitRatio::Default,
            },
            in_channels: 1,
            image_size: 8,
            num_classes: 3,
            switchable_norms: true,
        }
    }

    #[test]
    fn stage_layout_follows_split() {
        let net = AdaptiveDepthNetwork::new(micro_resnet(), 1).unwrap();
        let lens: Vec<_> = net
            .stages()
            .iter()
            .map(|s| (s.mandatory.len(), s.skippable.len()))
            .collect();
        assert_eq!(lens, [(1, 1), (2, 1)]);
        for stage in net.stages() {
            assert!(stage.mandatory.iter().all(|b| b.uses_switchable_norm()));
            assert!(stage.skippable.iter().all(|b| !b.uses_switchable_norm()));
            assert!(stage.skippable.iter().all(|b| !b.changes_shape()));
        }
    }

    #[test]
    fn every_config_gives_logits() {
        let mut net = AdaptiveDepthNetwork::new(micro_resnet(), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = Tensor::randn(&[2, 1, 8, 8], 1.0, &mut rng);
        for cfg in enumerate_subnets(2) {
            let mut tape = Tape::inference();
            let x = tape.input(input.clone());
            let out = net.forward(&mut tape, x, &cfg, false).unwrap();
            assert_eq!(tape.shape(out.logits), &[2, 3]);
            assert_eq!(out.features.0.len(), 2);
        }
        let mut tape = Tape::inference();
        let x = tape.input(input);
        let bad = SkipConfig::parse_for("TTT", 3).unwrap();
        assert!(net.forward(&mut tape, x, &bad, false).is_err());
    }

    #[test]
    fn param_scopes_nest() {
        let net = AdaptiveDepthNetwork::new(micro_resnet(), 4).unwrap();
        let whole = net.param_count(ParamScope::Whole).unwrap();
        for cfg in enumerate_subnets(2) {
            assert!(net.param_count(ParamScope::Config(&cfg)).unwrap() < whole);
        }
        let full = net
            .param_count(ParamScope::Config(&SkipConfig::super_net(2)))
            .unwrap();
        assert_eq!(full + net.second_norm_set_params(), whole);
    }

    #[test]
    fn vit_runs_all_configs() {
        let mut spec = ModelSpec::vit_tiny(4);
        if let Architecture::Vit { dim, mlp_hidden, .. } = &mut spec.arch {
            *dim = 8;
            *mlp_hidden = 16;
        }
        let mut net = AdaptiveDepthNetwork::new(spec, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let input = Tensor::randn(&[2, 1, 28, 28], 1.0, &mut rng);
        let mut flops = Vec::new();
        for cfg in enumerate_subnets(4) {
            let mut tape = Tape::inference();
            let x = tape.input(input.clone());
            let out = net.forward(&mut tape, x, &cfg, true).unwrap();
            assert_eq!(tape.shape(out.logits), &[2, 4]);
            flops.push(net.flops(&cfg).unwrap());
        }
        assert!(flops.last() < flops.first());
    }
}
