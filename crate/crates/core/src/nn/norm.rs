use crate::autodiff::{BnStats, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamKind, ParamStore};

pub const BN_EPS: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;
pub const LN_EPS: f32 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormKind {
    BatchNorm2d,
    LayerNorm,
}

#[derive(Clone, Debug)]
pub struct NormSet {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: Option<ParamId>,
    pub running_var: Option<ParamId>,
}

/// Normalisation layer with one or two parameter/statistic sets.
///
/// A switchable norm sits in a mandatory block and holds exactly two sets:
/// mode 0 is used while its stage's skippable blocks run, mode 1 while they
/// are skipped. A plain norm has one set and ignores the mode.
#[derive(Clone, Debug)]
pub struct SwitchableNorm {
    pub kind: NormKind,
    pub num_features: usize,
    pub sets: Vec<NormSet>,
    pub momentum: f32,
    pub eps: f32,
}

impl SwitchableNorm {
    pub fn switchable(store: &mut ParamStore, name: &str, kind: NormKind, features: usize) -> Self {
        Self::with_sets(store, name, kind, features, 2)
    }

    pub fn plain(store: &mut ParamStore, name: &str, kind: NormKind, features: usize) -> Self {
        Self::with_sets(store, name, kind, features, 1)
    }

    fn with_sets(
        store: &mut ParamStore,
        name: &str,
        kind: NormKind,
        features: usize,
        count: usize,
    ) -> Self {
        let sets = (0..count)
            .map(|s| {
                let prefix = if count == 1 {
                    name.to_string()
                } else {
                    format!("{name}.set{s}")
                };
                let mk = |store: &mut ParamStore, what: &str, init: f32, kind| {
                    store.add(format!("{prefix}.{what}"), Tensor::full(&[features], init), kind)
                };
                let gamma = mk(store, "gamma", 1.0, ParamKind::NoDecay);
                let beta = mk(store, "beta", 0.0, ParamKind::NoDecay);
                let (running_mean, running_var) = match kind {
                    NormKind::BatchNorm2d => (
                        Some(mk(store, "running_mean", 0.0, ParamKind::Buffer)),
                        Some(mk(store, "running_var", 1.0, ParamKind::Buffer)),
                    ),
                    NormKind::LayerNorm => (None, None),
                };
                NormSet {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                }
            })
            .collect();
        let eps = match kind {
            NormKind::BatchNorm2d => BN_EPS,
            NormKind::LayerNorm => LN_EPS,
        };
        Self {
            kind,
            num_features: features,
            sets,
            momentum: BN_MOMENTUM,
            eps,
        }
    }

    pub fn is_switchable(&self) -> bool {
        self.sets.len() == 2
    }

    /// Parameter set used in `mode`.
    pub fn set(&self, mode: usize) -> Result<&NormSet> {
        if mode > 1 {
            return Err(Error::InvalidMode(mode));
        }
        Ok(&self.sets[mode.min(self.sets.len() - 1)])
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &mut ParamStore,
        x: Var,
        mode: usize,
        training: bool,
    ) -> Result<Var> {
        let set = self.set(mode)?;
        let shape = tape.shape(x);
        let features = match self.kind {
            NormKind::BatchNorm2d => shape.get(1).copied(),
            NormKind::LayerNorm => shape.last().copied(),
        };
        if features != Some(self.num_features) {
            return Err(Error::invalid(
                "switchable_norm",
                format!("expected {} features, input is {shape:?}", self.num_features),
            ));
        }
        let gamma = tape.param(store, set.gamma);
        let beta = tape.param(store, set.beta);
        match self.kind {
            NormKind::LayerNorm => tape.layer_norm(x, gamma, beta, self.eps),
            NormKind::BatchNorm2d => {
                let (rm, rv) = (
                    set.running_mean.expect("batchnorm has stats"),
                    set.running_var.expect("batchnorm has stats"),
                );
                if training {
                    let (mean, var) = store.pair_mut(rm, rv);
                    let stats = BnStats::Train {
                        running_mean: mean.data_mut(),
                        running_var: var.data_mut(),
                        momentum: self.momentum,
                    };
                    tape.batch_norm(x, gamma, beta, stats, self.eps)
                } else {
                    let stats = BnStats::Eval {
                        running_mean: store.value(rm).data(),
                        running_var: store.value(rv).data(),
                    };
                    tape.batch_norm(x, gamma, beta, stats, self.eps)
                }
            }
        }
    }

    /// Trainable parameters used in `mode`.
    pub fn params(&self, mode: usize) -> Vec<ParamId> {
        let set = &self.sets[mode.min(self.sets.len() - 1)];
        vec![set.gamma, set.beta]
    }

    /// Every tensor of every set, buffers included.
    pub fn all_tensors(&self) -> Vec<ParamId> {
        self.sets
            .iter()
            .flat_map(|s| [Some(s.gamma), Some(s.beta), s.running_mean, s.running_var])
            .flatten()
            .collect()
    }
}
