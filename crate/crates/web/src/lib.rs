//! Browser demo of a small adaptive depth network trained on synthetic
//! shapes. The page can train a few steps, evaluate every sub-network on
//! the FLOPs/accuracy plane and inspect one skip configuration.
//!
//! Every method returns JSON. Errors come back as `{"error": "..."}`.

use adn_core::adaptive::{
    enumerate_subnets, AdaptiveDepthNetwork, Architecture, ModelSpec, ParamScope, SkipConfig,
    SplitRatio,
};
use adn_core::data::{normalize, synthetic_shapes_with, ChannelStats, LabeledImageSet, SyntheticOptions};
use adn_core::eval::{evaluate, pareto_report, residual_profile, SubnetRecord, TensorDataset};
use adn_core::training::{epoch_batches, DistillStrategy, TrainRecipe, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use wasm_bindgen::prelude::*;

const IMAGE_SIZE: usize = 16;
const CLASSES: usize = 4;
const TRAIN_IMAGES: usize = 256;
const EVAL_IMAGES: usize = 128;
const BATCH: usize = 32;
/// Steps the learning-rate schedule spans.
const SCHEDULE_STEPS: usize = 400;

fn demo_spec() -> ModelSpec {
    ModelSpec {
        arch: Architecture::Resnet {
            stem_width: 8,
            stage_blocks: vec![2, 2, 2, 2],
            widths: vec![8, 8, 16, 16],
            ratio: SplitRatio::Default,
        },
        in_channels: 1,
        image_size: IMAGE_SIZE,
        num_classes: CLASSES,
        switchable_norms: true,
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).unwrap_or_else(|e| error_json(&e.to_string()))
}

fn error_json(msg: &str) -> String {
    json!({ "error": msg }).to_string()
}

#[wasm_bindgen]
pub struct Demo {
    net: AdaptiveDepthNetwork,
    trainer: Trainer,
    train_set: LabeledImageSet,
    stats: ChannelStats,
    eval: TensorDataset,
    rng: ChaCha8Rng,
    seed: u64,
    epoch: usize,
    queue: Vec<Vec<usize>>,
}

#[derive(Serialize)]
struct StepRow {
    step: usize,
    loss_super: f32,
    loss_base: f32,
    lr: f64,
}

#[wasm_bindgen]
impl Demo {
    /// Fresh network and data for `seed`.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64) -> Demo {
        Self::build(seed).expect("demo configuration is valid")
    }

    fn build(seed: u64) -> adn_core::Result<Demo> {
        let opts = SyntheticOptions {
            channels: 1,
            ..SyntheticOptions::default()
        };
        let all = synthetic_shapes_with(TRAIN_IMAGES + EVAL_IMAGES, CLASSES, IMAGE_SIZE, seed, &opts)?;
        let train_idx: Vec<usize> = (0..TRAIN_IMAGES).collect();
        let eval_idx: Vec<usize> = (TRAIN_IMAGES..all.len()).collect();
        let train_set = all.select(&train_idx, adn_core::data::Split::Train);
        let eval_set = all.select(&eval_idx, adn_core::data::Split::Val);
        let stats = ChannelStats::compute(&train_set)?;
        let eval = TensorDataset::from_set(&eval_set, &stats)?;
        let net = AdaptiveDepthNetwork::new(demo_spec(), seed)?;
        let recipe = TrainRecipe {
            epochs: 1,
            batch_size: BATCH,
            lr: 0.05,
            warmup_epochs: 0,
            crop_pad: 0,
            hflip_prob: 0.0,
            distill_strategy: DistillStrategy::Ours,
            seed,
            ..TrainRecipe::default()
        };
        let trainer = Trainer::new(&net, recipe, SCHEDULE_STEPS)?;
        Ok(Demo {
            net,
            trainer,
            train_set,
            stats,
            eval,
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            epoch: 0,
            queue: Vec::new(),
        })
    }

    #[wasm_bindgen(getter)]
    pub fn stages(&self) -> usize {
        self.net.num_stages()
    }

    #[wasm_bindgen(getter)]
    pub fn steps(&self) -> usize {
        self.trainer.steps_done()
    }

    /// Runs `n` two-pass training steps; returns their losses and the
    /// super-net and base-net accuracy afterwards.
    pub fn train_steps(&mut self, n: usize) -> String {
        match self.try_train(n) {
            Ok(s) => s,
            Err(e) => error_json(&e.to_string()),
        }
    }

    fn try_train(&mut self, n: usize) -> adn_core::Result<String> {
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            if self.queue.is_empty() {
                self.queue = epoch_batches(self.train_set.len(), BATCH, self.seed, self.epoch);
                self.queue.reverse();
                self.epoch += 1;
            }
            let idx = self.queue.pop().expect("refilled above");
            let batch = self.train_set.batch(&idx);
            let x = normalize(&batch, &self.stats)?;
            let r = self.trainer.step(&mut self.net, &x, &batch.labels, &mut self.rng)?;
            rows.push(StepRow {
                step: r.step,
                loss_super: r.loss_super,
                loss_base: r.loss_base,
                lr: r.lr,
            });
        }
        let k = self.net.num_stages();
        let sup = evaluate(&mut self.net, &SkipConfig::super_net(k), &self.eval)?;
        let base = evaluate(&mut self.net, &SkipConfig::base_net(k), &self.eval)?;
        Ok(to_json(&json!({ "steps": rows, "acc_supernet": sup, "acc_basenet": base })))
    }

    /// Every sub-network with FLOPs, parameters, accuracy and Pareto flag,
    /// sorted by FLOPs.
    pub fn subnets(&mut self) -> String {
        let records: adn_core::Result<Vec<SubnetRecord>> = enumerate_subnets(self.net.num_stages())
            .into_iter()
            .map(|skip| {
                Ok(SubnetRecord {
                    flops: self.net.flops(&skip)?,
                    params: self.net.param_count(ParamScope::Config(&skip))?,
                    top1: evaluate(&mut self.net, &skip, &self.eval)?,
                    skip,
                })
            })
            .collect();
        match records {
            Ok(r) => to_json(&pareto_report(&r)),
            Err(e) => error_json(&e.to_string()),
        }
    }

    /// Accuracy, cost and per-block residual ratios of one skip string.
    pub fn inspect(&mut self, skip: &str) -> String {
        match self.try_inspect(skip) {
            Ok(s) => s,
            Err(e) => error_json(&e.to_string()),
        }
    }

    fn try_inspect(&mut self, skip: &str) -> adn_core::Result<String> {
        let skip = SkipConfig::parse_for(skip, self.net.num_stages())?;
        let profile = residual_profile(&mut self.net, &skip, &self.eval, 1)?;
        let blocks: Vec<_> = profile
            .blocks
            .iter()
            .map(|b| json!({ "stage": b.stage, "block": b.block, "skippable": b.skippable, "ratio": b.ratio }))
            .collect();
        Ok(to_json(&json!({
            "skip": skip.to_string(),
            "flops": self.net.flops(&skip)?,
            "params": self.net.param_count(ParamScope::Config(&skip))?,
            "top1": evaluate(&mut self.net, &skip, &self.eval)?,
            "blocks": blocks,
            "mandatory_mean": profile.mean_ratio(false),
            "skippable_mean": profile.mean_ratio(true),
        })))
    }
}
