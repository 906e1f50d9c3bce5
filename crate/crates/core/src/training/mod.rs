//! Two-pass self-distillation training, optimizers and learning-rate
//! schedules.

mod optim;
mod schedule;

pub use optim::{adamw_step, sgd_momentum_step, Optimizer, OptimizerConfig, OptimizerKind};
pub use schedule::{cosine_lr, step_lr, LrSchedule};

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adaptive::{enumerate_subnets, AdaptiveDepthNetwork, SkipConfig, StageFeatures};
use crate::autodiff::{Tape, Tensor, Var};
use crate::data::{augment, normalize, ChannelStats, LabeledImageSet};
use crate::error::{Error, Result};
use crate::eval::{evaluate, TensorDataset};

/// Which sub-networks act as teacher and student in each step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillStrategy {
    /// Super-net teaches the base-net.
    #[default]
    Ours,
    /// Random teacher, base-net student.
    TeacherRandom,
    /// Super-net teacher, random student.
    StudentRandom,
    BothRandom,
    /// Both passes run, the base-net trained with cross-entropy.
    None,
    /// Super-net only, one pass per step.
    Vanilla,
}

impl DistillStrategy {
    pub const ALL: [DistillStrategy; 6] = [
        Self::Ours,
        Self::TeacherRandom,
        Self::StudentRandom,
        Self::BothRandom,
        Self::None,
        Self::Vanilla,
    ];

    /// Teacher and student configurations for one step. Random choices
    /// draw uniformly from all `2^n` configurations, teacher first.
    pub fn plan(self, n_stages: usize, rng: &mut impl Rng) -> PassPlan {
        let mut draw = || {
            let all = enumerate_subnets(n_stages);
            all[rng.random_range(0..all.len())].clone()
        };
        let (sup, base) = (SkipConfig::super_net(n_stages), SkipConfig::base_net(n_stages));
        let (teacher, student) = match self {
            Self::Ours => (sup, Some(base)),
            Self::TeacherRandom => (draw(), Some(base)),
            Self::StudentRandom => (sup, Some(draw())),
            Self::BothRandom => {
                let t = draw();
                (t, Some(draw()))
            }
            Self::None => (sup, Some(base)),
            Self::Vanilla => (sup, None),
        };
        PassPlan {
            teacher,
            student,
            student_ce: self == Self::None,
        }
    }
}

impl FromStr for DistillStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|d| d.to_string() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown distill strategy {s:?} (ours, teacher_random, student_random, both_random, none, vanilla)"
                ))
            })
    }
}

impl fmt::Display for DistillStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ours => "ours",
            Self::TeacherRandom => "teacher_random",
            Self::StudentRandom => "student_random",
            Self::BothRandom => "both_random",
            Self::None => "none",
            Self::Vanilla => "vanilla",
        })
    }
}

/// The passes of one training step.
#[derive(Clone, Debug, PartialEq)]
pub struct PassPlan {
    /// Trained with cross-entropy.
    pub teacher: SkipConfig,
    /// Trained towards the teacher, if any.
    pub student: Option<SkipConfig>,
    /// Student uses cross-entropy on the labels instead of distillation.
    pub student_ce: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainRecipe {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub momentum: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub weight_decay: f32,
    pub lr_schedule: LrSchedule,
    pub warmup_epochs: usize,
    pub kl_temperature: f32,
    pub feature_kl: bool,
    pub distill_strategy: DistillStrategy,
    pub seed: u64,
    /// Reflect padding for random crops; 0 disables cropping.
    pub crop_pad: usize,
    pub hflip_prob: f64,
}

impl Default for TrainRecipe {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 128,
            optimizer: OptimizerKind::SgdMomentum,
            lr: 0.1,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 5e-4,
            lr_schedule: LrSchedule::Cosine,
            warmup_epochs: 5,
            kl_temperature: 1.0,
            feature_kl: false,
            distill_strategy: DistillStrategy::Ours,
            seed: 0,
            crop_pad: 4,
            hflip_prob: 0.5,
        }
    }
}

impl TrainRecipe {
    /// Digit recipe: 20 epochs, small crops, no flips.
    pub fn mnist() -> Self {
        Self {
            epochs: 20,
            crop_pad: 2,
            hflip_prob: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.kl_temperature > 0.0 && self.kl_temperature.is_finite()) {
            return bad(format!("kl_temperature must be positive, got {}", self.kl_temperature));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return bad(format!("hflip_prob must lie in [0, 1], got {}", self.hflip_prob));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return bad("momentum must lie in [0, 1) and weight_decay be non-negative".into());
        }
        Ok(())
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            kind: self.optimizer,
            momentum: self.momentum,
            beta1: self.beta1,
            beta2: self.beta2,
            weight_decay: self.weight_decay,
            ..OptimizerConfig::default()
        }
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
        }
        match key {
            "epochs" => self.epochs = p(key, value)?,
            "batch_size" => self.batch_size = p(key, value)?,
            "optimizer" => self.optimizer = value.parse()?,
            "lr" => self.lr = p(key, value)?,
            "momentum" => self.momentum = p(key, value)?,
            "beta1" => self.beta1 = p(key, value)?,
            "beta2" => self.beta2 = p(key, value)?,
            "weight_decay" => self.weight_decay = p(key, value)?,
            "lr_schedule" => self.lr_schedule = value.parse()?,
            "warmup_epochs" => self.warmup_epochs = p(key, value)?,
            "kl_temperature" => self.kl_temperature = p(key, value)?,
            "feature_kl" => self.feature_kl = p(key, value)?,
            "distill_strategy" => self.distill_strategy = value.parse()?,
            "seed" => self.seed = p(key, value)?,
            "crop_pad" => self.crop_pad = p(key, value)?,
            "hflip_prob" => self.hflip_prob = p(key, value)?,
            _ => return Err(Error::Config(format!("unknown recipe key {key:?}"))),
        }
        Ok(())
    }
}

/// KL divergence between per-sample softmaxes of flattened stage features,
/// summed over stages and averaged over the batch. `teacher` values are
/// constants.
pub fn feature_kl(
    tape: &mut Tape,
    teacher: &[Tensor],
    student: &StageFeatures,
    temperature: f32,
) -> Result<Var> {
    if teacher.len() != student.0.len() || teacher.is_empty() {
        return Err(Error::shape("feature_kl", &[teacher.len()], &[student.0.len()]));
    }
    let mut total: Option<Var> = None;
    for (t, &s) in teacher.iter().zip(&student.0) {
        if t.shape() != tape.shape(s) {
            return Err(Error::shape("feature_kl", t.shape(), tape.shape(s)));
        }
        let n = t.batch();
        let flat = [n, t.numel() / n.max(1)];
        let tv = tape.input(t.clone().reshape(&flat)?);
        let sv = tape.reshape(s, &flat)?;
        let kl = tape.kl_divergence(tv, sv, temperature)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, kl)?,
            None => kl,
        });
    }
    Ok(total.expect("at least one stage"))
}

/// Losses, pass counts and per-pass wall time of one gradient accumulation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PassStats {
    pub loss_super: f32,
    /// Zero when the plan has no student pass.
    pub loss_base: f32,
    pub forwards: usize,
    pub backwards: usize,
    pub super_ms: f64,
    pub base_ms: f64,
}

struct Stopwatch(#[cfg(not(target_arch = "wasm32"))] std::time::Instant);

impl Stopwatch {
    fn start() -> Self {
        Stopwatch(
            #[cfg(not(target_arch = "wasm32"))]
            std::time::Instant::now(),
        )
    }

    fn ms(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        return self.0.elapsed().as_secs_f64() * 1e3;
        #[cfg(target_arch = "wasm32")]
        0.0
    }
}

/// Runs the teacher pass then the student pass of `plan`, adding both
/// gradients into the parameter store. Gradients are not zeroed first.
pub fn accumulate_gradients(
    net: &mut AdaptiveDepthNetwork,
    x: &Tensor,
    labels: &[usize],
    plan: &PassPlan,
    recipe: &TrainRecipe,
) -> Result<PassStats> {
    let mut stats = PassStats::default();
    let watch = Stopwatch::start();
    let mut tape = Tape::new();
    let xv = tape.input(x.clone());
    let out = net.forward(&mut tape, xv, &plan.teacher, true)?;
    stats.forwards += 1;
    let loss = tape.cross_entropy(out.logits, labels)?;
    stats.loss_super = tape.value(loss).data()[0];
    tape.backward_into(loss, net.store_mut())?;
    stats.backwards += 1;
    stats.super_ms = watch.ms();

    let Some(student) = &plan.student else {
        return Ok(stats);
    };
    let teacher_logits = tape.value(out.logits).clone();
    let teacher_feats: Vec<Tensor> = if recipe.feature_kl && !plan.student_ce {
        out.features.0.iter().map(|&v| tape.value(v).clone()).collect()
    } else {
        Vec::new()
    };
    drop(tape);

    let watch = Stopwatch::start();
    let mut tape = Tape::new();
    let xv = tape.input(x.clone());
    let out = net.forward(&mut tape, xv, student, true)?;
    stats.forwards += 1;
    let loss = if plan.student_ce {
        tape.cross_entropy(out.logits, labels)?
    } else {
        let t = tape.input(teacher_logits);
        let kl = tape.kl_divergence(t, out.logits, recipe.kl_temperature)?;
        if recipe.feature_kl {
            let fk = feature_kl(&mut tape, &teacher_feats, &out.features, recipe.kl_temperature)?;
            tape.add(fk, kl)?
        } else {
            kl
        }
    };
    stats.loss_base = tape.value(loss).data()[0];
    tape.backward_into(loss, net.store_mut())?;
    stats.backwards += 1;
    stats.base_ms = watch.ms();
    Ok(stats)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub loss_super: f32,
    pub loss_base: f32,
    /// L2 norm of the accumulated gradient before the update.
    pub grad_norm: f64,
    pub lr: f64,
    pub teacher: SkipConfig,
    pub student: Option<SkipConfig>,
    pub forwards: usize,
    pub backwards: usize,
    pub super_ms: f64,
    pub base_ms: f64,
}

/// Optimizer, schedule position and recipe of one training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    recipe: TrainRecipe,
    optimizer: Optimizer,
    step: usize,
    total_steps: usize,
    warmup_steps: usize,
}

impl Trainer {
    /// Warmup is capped at a quarter of all steps.
    pub fn new(net: &AdaptiveDepthNetwork, recipe: TrainRecipe, steps_per_epoch: usize) -> Result<Self> {
        recipe.validate()?;
        let total_steps = (recipe.epochs * steps_per_epoch).max(1);
        let warmup_steps = (recipe.warmup_epochs * steps_per_epoch).min(total_steps / 4);
        Ok(Self {
            optimizer: Optimizer::new(recipe.optimizer_config(), net.store()),
            recipe,
            step: 0,
            total_steps,
            warmup_steps,
        })
    }

    pub fn recipe(&self) -> &TrainRecipe {
        &self.recipe
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn current_lr(&self) -> f64 {
        self.recipe.lr_schedule.lr(
            self.step.min(self.total_steps),
            self.total_steps,
            self.recipe.lr,
            self.warmup_steps,
        )
    }

    /// Zeroes gradients, runs both passes, then applies one update. A
    /// non-finite loss aborts before the update.
    pub fn step(
        &mut self,
        net: &mut AdaptiveDepthNetwork,
        x: &Tensor,
        labels: &[usize],
        rng: &mut impl Rng,
    ) -> Result<StepReport> {
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let plan = self.recipe.distill_strategy.plan(net.num_stages(), rng);
        net.store_mut().zero_grads();
        let stats = accumulate_gradients(net, x, labels, &plan, &self.recipe)?;
        if !stats.loss_super.is_finite() || !stats.loss_base.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.step,
                loss_super: stats.loss_super,
                loss_base: stats.loss_base,
            });
        }
        let lr = self.current_lr();
        let grad_norm = net.store().grad_norm();
        self.optimizer.step(net.store_mut(), lr as f32)?;
        self.step += 1;
        Ok(StepReport {
            step: self.step,
            loss_super: stats.loss_super,
            loss_base: stats.loss_base,
            grad_norm,
            lr,
            teacher: plan.teacher,
            student: plan.student,
            forwards: stats.forwards,
            backwards: stats.backwards,
            super_ms: stats.super_ms,
            base_ms: stats.base_ms,
        })
    }
}

/// One `train_log.csv` row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Optimizer steps completed so far.
    pub step: usize,
    /// Mean over the epoch's steps.
    pub loss_super: f64,
    pub loss_base: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    pub acc_supernet: Option<f64>,
    pub acc_basenet: Option<f64>,
    pub wall_ms: f64,
}

/// File names written into the output directory.
pub const CHECKPOINT_FILE: &str = "checkpoint.adnw";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";

const STREAM_SHUFFLE: u64 = 1;
const STREAM_AUGMENT: u64 = 2;
const STREAM_STRATEGY: u64 = 3;

fn stream(seed: u64, purpose: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose << 32 | epoch as u64);
    rng
}

/// Mini-batch index lists for one epoch; a trailing batch of one sample is
/// dropped.
pub fn epoch_batches(len: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut stream(seed, STREAM_SHUFFLE, epoch));
    order
        .chunks(batch_size.max(1))
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect()
}

fn snapshot(net: &AdaptiveDepthNetwork) -> Vec<Tensor> {
    net.store().iter().map(|(_, e)| e.value.clone()).collect()
}

fn restore(net: &mut AdaptiveDepthNetwork, values: Vec<Tensor>) {
    let ids: Vec<_> = net.store().ids().collect();
    for (id, v) in ids.into_iter().zip(values) {
        *net.store_mut().value_mut(id) = v;
    }
}

/// Trains `net` for `recipe.epochs` epochs.
///
/// Data order, augmentation and strategy sampling draw from separate
/// streams of `recipe.seed`. After every epoch the super-net and base-net
/// are scored on `val` and, when `out_dir` is given, a log row and the
/// checkpoint are written. On a non-finite loss the weights from the start
/// of the failing epoch are restored and the error returned.
pub fn train(
    net: &mut AdaptiveDepthNetwork,
    train_set: &LabeledImageSet,
    val: Option<&TensorDataset>,
    stats: &ChannelStats,
    recipe: &TrainRecipe,
    out_dir: Option<&Path>,
    progress: &mut dyn FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    if train_set.len() < 2 {
        return Err(Error::EmptyDataset);
    }
    let steps_per_epoch = epoch_batches(train_set.len(), recipe.batch_size, recipe.seed, 0).len();
    let mut trainer = Trainer::new(net, recipe.clone(), steps_per_epoch)?;
    let mut writer = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            net.save_weights(&dir.join(CHECKPOINT_FILE))?;
            let path = dir.join(TRAIN_LOG_FILE);
            Some((csv::Writer::from_path(&path).map_err(|e| Error::format(&path, e.to_string()))?, path))
        }
        None => None,
    };
    let (n, sup) = (net.num_stages(), SkipConfig::super_net(net.num_stages()));
    let base = SkipConfig::base_net(n);
    let mut logs = Vec::with_capacity(recipe.epochs);
    for epoch in 0..recipe.epochs {
        let watch = Stopwatch::start();
        let good = snapshot(net);
        let mut aug_rng = stream(recipe.seed, STREAM_AUGMENT, epoch);
        let mut plan_rng = stream(recipe.seed, STREAM_STRATEGY, epoch);
        let (mut sum_super, mut sum_base, mut lr, mut steps) = (0.0, 0.0, 0.0, 0usize);
        for indices in epoch_batches(train_set.len(), recipe.batch_size, recipe.seed, epoch) {
            let mut batch = train_set.batch(&indices);
            augment(&mut batch, recipe.crop_pad, recipe.hflip_prob, &mut aug_rng);
            let x = normalize(&batch, stats)?;
            let report = match trainer.step(net, &x, &batch.labels, &mut plan_rng) {
                Ok(r) => r,
                Err(e) => {
                    if matches!(e, Error::NonFiniteLoss { .. }) {
                        log::error!("{e}; restoring weights from the start of epoch {}", epoch + 1);
                        restore(net, good);
                    }
                    return Err(e);
                }
            };
            sum_super += f64::from(report.loss_super);
            sum_base += f64::from(report.loss_base);
            lr = report.lr;
            steps += 1;
        }
        let (acc_supernet, acc_basenet) = match val {
            Some(v) => (Some(evaluate(net, &sup, v)?), Some(evaluate(net, &base, v)?)),
            None => (None, None),
        };
        let row = EpochLog {
            epoch: epoch + 1,
            step: trainer.steps_done(),
            loss_super: sum_super / steps.max(1) as f64,
            loss_base: sum_base / steps.max(1) as f64,
            lr,
            acc_supernet,
            acc_basenet,
            wall_ms: watch.ms(),
        };
        if let (Some(dir), Some((w, path))) = (out_dir, writer.as_mut()) {
            w.serialize(&row).map_err(|e| Error::format(path.as_path(), e.to_string()))?;
            w.flush().map_err(|e| Error::io(path.as_path(), e))?;
            net.save_weights(&dir.join(CHECKPOINT_FILE))?;
        }
        progress(&row);
        logs.push(row);
    }
    Ok(logs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_names_round_trip() {
        for s in DistillStrategy::ALL {
            assert_eq!(s.to_string().parse::<DistillStrategy>().unwrap(), s);
        }
        assert!("frobnicate".parse::<DistillStrategy>().is_err());
    }

    #[test]
    fn plans() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ours = DistillStrategy::Ours.plan(4, &mut rng);
        assert_eq!(ours.teacher.to_string(), "FFFF");
        assert_eq!(ours.student.unwrap().to_string(), "TTTT");
        assert!(DistillStrategy::None.plan(4, &mut rng).student_ce);
        assert!(DistillStrategy::Vanilla.plan(4, &mut rng).student.is_none());
        let seen: std::collections::HashSet<String> = (0..200)
            .map(|_| DistillStrategy::TeacherRandom.plan(2, &mut rng).teacher.to_string())
            .collect();
        assert_eq!(seen.len(), 4);
    }

    #[test]
    fn recipe_validation_and_set() {
        let mut r = TrainRecipe::default();
        r.validate().unwrap();
        r.set("lr", "0.05").unwrap();
        r.set("distill_strategy", "both_random").unwrap();
        assert_eq!((r.lr, r.distill_strategy), (0.05, DistillStrategy::BothRandom));
        assert!(r.set("lr", "abc").is_err());
        assert!(r.set("nope", "1").is_err());
        r.lr = 0.0;
        assert!(r.validate().is_err());
        let t = TrainRecipe { kl_temperature: 0.0, ..TrainRecipe::default() };
        assert!(t.validate().is_err());
        let e = TrainRecipe { epochs: 0, ..TrainRecipe::default() };
        assert!(e.validate().is_err());
    }

    #[test]
    fn batches_cover_and_drop_singletons() {
        let b = epoch_batches(9, 4, 1, 0);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), [4, 4]);
        let b = epoch_batches(10, 4, 1, 0);
        let mut all: Vec<usize> = b.concat();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_ne!(epoch_batches(10, 4, 1, 0), epoch_batches(10, 4, 1, 1));
    }

    #[test]
    fn feature_kl_identical_is_zero() {
        let mut tape = Tape::new();
        let t = Tensor::from_fn(&[2, 3, 2, 2], |i| (i as f32 * 0.37).sin());
        let s = tape.input(t.clone());
        let kl = feature_kl(&mut tape, &[t], &StageFeatures(vec![s]), 1.0).unwrap();
        assert!(tape.value(kl).data()[0].abs() < 1e-7);
        let wrong = tape.input(Tensor::zeros(&[2, 3]));
        let bad = Tensor::zeros(&[2, 4]);
        assert!(feature_kl(&mut tape, &[bad], &StageFeatures(vec![wrong]), 1.0).is_err());
    }
}
