use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamKind, ParamStore};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    SgdMomentum,
    Adamw,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd_momentum" | "sgd" => Ok(Self::SgdMomentum),
            "adamw" => Ok(Self::Adamw),
            _ => Err(Error::Config(format!("unknown optimizer {s:?} (sgd_momentum, adamw)"))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::SgdMomentum => "sgd_momentum",
            Self::Adamw => "adamw",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub momentum: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::SgdMomentum,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-4,
        }
    }
}

fn check_len(op: &'static str, a: usize, b: usize, c: usize) -> Result<()> {
    if a != b || a != c {
        return Err(Error::shape(op, &[a], &[b, c]));
    }
    Ok(())
}

/// `v ← momentum·v + grad + wd·param`, then `param ← param − lr·v`.
pub fn sgd_momentum_step(
    param: &mut [f32],
    grad: &[f32],
    velocity: &mut [f32],
    lr: f32,
    momentum: f32,
    weight_decay: f32,
) -> Result<()> {
    check_len("sgd_momentum_step", param.len(), grad.len(), velocity.len())?;
    for ((p, &g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = momentum * *v + g + weight_decay * *p;
        *p -= lr * *v;
    }
    Ok(())
}

/// One AdamW update with decoupled weight decay; `t` counts from 1.
#[allow(clippy::too_many_arguments)]
pub fn adamw_step(
    param: &mut [f32],
    grad: &[f32],
    m: &mut [f32],
    v: &mut [f32],
    t: u64,
    lr: f32,
    cfg: &OptimizerConfig,
    weight_decay: f32,
) -> Result<()> {
    check_len("adamw_step", param.len(), grad.len(), m.len())?;
    check_len("adamw_step", param.len(), grad.len(), v.len())?;
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + cfg.eps);
        param[i] -= lr * (update + weight_decay * param[i]);
    }
    Ok(())
}

/// Optimizer state for every trainable tensor of a store. Weight decay
/// applies to [`ParamKind::Weight`] tensors only.
#[derive(Clone, Debug)]
pub struct Optimizer {
    config: OptimizerConfig,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
    steps: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, store: &ParamStore) -> Self {
        let zeros = |adam: bool| -> Vec<Vec<f32>> {
            store
                .iter()
                .map(|(_, e)| {
                    let used = e.kind.is_trainable() && (adam || config.kind == OptimizerKind::SgdMomentum);
                    if used {
                        vec![0.0; e.value.numel()]
                    } else {
                        Vec::new()
                    }
                })
                .collect()
        };
        let adam = config.kind == OptimizerKind::Adamw;
        Self {
            config,
            first: zeros(true),
            second: if adam { zeros(true) } else { Vec::new() },
            steps: 0,
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies the accumulated gradients at learning rate `lr`.
    pub fn step(&mut self, store: &mut ParamStore, lr: f32) -> Result<()> {
        self.steps += 1;
        let ids: Vec<_> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let entry = store.entry_mut(id);
            if !entry.kind.is_trainable() {
                continue;
            }
            let wd = if entry.kind == ParamKind::Weight {
                self.config.weight_decay
            } else {
                0.0
            };
            let param = entry.value.data_mut();
            match self.config.kind {
                OptimizerKind::SgdMomentum => sgd_momentum_step(
                    param,
                    &entry.grad,
                    &mut self.first[i],
                    lr,
                    self.config.momentum,
                    wd,
                )?,
                OptimizerKind::Adamw => adamw_step(
                    param,
                    &entry.grad,
                    &mut self.first[i],
                    &mut self.second[i],
                    self.steps,
                    lr,
                    &self.config,
                    wd,
                )?,
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use crate::autodiff::Tensor;

    use super::*;

    #[test]
    fn plain_gradient_descent() {
        let mut p = [1.0, -2.0];
        let mut v = [0.0; 2];
        sgd_momentum_step(&mut p, &[0.5, 1.0], &mut v, 0.1, 0.0, 0.0).unwrap();
        assert_eq!(p, [0.95, -2.1]);
    }

    #[test]
    fn momentum_unrolls() {
        // v1 = g, v2 = 0.9·g + g: total update lr·g·(1 + 1.9)
        let (lr, g) = (0.1f32, 2.0f32);
        let mut p = [0.0f32];
        let mut v = [0.0];
        for _ in 0..2 {
            sgd_momentum_step(&mut p, &[g], &mut v, lr, 0.9, 0.0).unwrap();
        }
        assert!((p[0] + lr * g * 2.9).abs() < 1e-6, "{}", p[0]);
    }

    #[test]
    fn decay_only_shrinks() {
        let mut p = [3.0, -3.0];
        let mut v = [0.0; 2];
        for _ in 0..5 {
            sgd_momentum_step(&mut p, &[0.0, 0.0], &mut v, 0.1, 0.9, 0.01).unwrap();
        }
        assert!(p[0] < 3.0 && p[0] > 0.0 && p[1] > -3.0 && p[1] < 0.0);
        assert!(sgd_momentum_step(&mut p, &[0.0], &mut v, 0.1, 0.9, 0.0).is_err());
    }

    #[test]
    fn store_step_skips_decay_for_no_decay_and_buffers() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::full(&[2], 1.0), ParamKind::Weight);
        let b = store.add("b", Tensor::full(&[2], 1.0), ParamKind::NoDecay);
        let r = store.add("r", Tensor::full(&[2], 1.0), ParamKind::Buffer);
        let cfg = OptimizerConfig {
            weight_decay: 0.5,
            ..Default::default()
        };
        let mut opt = Optimizer::new(cfg, &store);
        opt.step(&mut store, 0.1).unwrap();
        assert_eq!(store.value(w).data(), &[0.95, 0.95]);
        assert_eq!(store.value(b).data(), &[1.0, 1.0]);
        assert_eq!(store.value(r).data(), &[1.0, 1.0]);
    }

    #[test]
    fn adamw_first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::full(&[1], 1.0), ParamKind::NoDecay);
        store.entry_mut(w).grad[0] = 0.3;
        let cfg = OptimizerConfig {
            kind: OptimizerKind::Adamw,
            ..Default::default()
        };
        let mut opt = Optimizer::new(cfg, &store);
        opt.step(&mut store, 0.01).unwrap();
        assert!((store.value(w).data()[0] - 0.99).abs() < 1e-6);
    }
}
