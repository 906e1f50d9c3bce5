mod common;

use adn_core::adaptive::{enumerate_subnets, SkipConfig};
use adn_core::autodiff::{Tape, Tensor};
use adn_core::training::{
    accumulate_gradients, feature_kl, train, DistillStrategy, PassPlan, TrainRecipe, Trainer, CHECKPOINT_FILE,
    TRAIN_LOG_FILE,
};
use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn recipe(strategy: DistillStrategy) -> TrainRecipe {
    TrainRecipe {
        batch_size: 8,
        distill_strategy: strategy,
        ..TrainRecipe::default()
    }
}

fn ours_plan() -> PassPlan {
    PassPlan {
        teacher: SkipConfig::super_net(4),
        student: Some(SkipConfig::base_net(4)),
        student_ce: false,
    }
}

/// Student-pass gradients alone, with the teacher logits computed on a
/// separate tape that is never differentiated.
fn student_only_grads(seed: u64, x: &Tensor, feature: bool) -> Vec<(String, Vec<f32>)> {
    let mut net = micro_net(seed);
    let mut t = Tape::new();
    let xv = t.input(x.clone());
    let teacher = net.forward(&mut t, xv, &SkipConfig::super_net(4), true).unwrap();
    let logits = t.value(teacher.logits).clone();
    let feats: Vec<Tensor> = teacher.features.0.iter().map(|&v| t.value(v).clone()).collect();
    net.store_mut().zero_grads();

    let mut s = Tape::new();
    let xv = s.input(x.clone());
    let out = net.forward(&mut s, xv, &SkipConfig::base_net(4), true).unwrap();
    let tl = s.input(logits);
    let mut loss = s.kl_divergence(tl, out.logits, 1.0).unwrap();
    if feature {
        let fk = feature_kl(&mut s, &feats, &out.features, 1.0).unwrap();
        loss = s.add(fk, loss).unwrap();
    }
    s.backward_into(loss, net.store_mut()).unwrap();
    grads(&net)
}

#[test]
fn two_pass_gradient_is_sum_of_isolated_passes() {
    let (x, y) = batch(8, 1);
    for feature in [false, true] {
        let r = TrainRecipe {
            feature_kl: feature,
            ..recipe(DistillStrategy::Ours)
        };
        let mut both = micro_net(5);
        both.store_mut().zero_grads();
        accumulate_gradients(&mut both, &x, &y, &ours_plan(), &r).unwrap();

        let mut teacher = micro_net(5);
        teacher.store_mut().zero_grads();
        let plan = PassPlan {
            student: None,
            ..ours_plan()
        };
        accumulate_gradients(&mut teacher, &x, &y, &plan, &r).unwrap();

        let student = student_only_grads(5, &x, feature);
        for (((name, g), (_, gt)), (_, gs)) in grads(&both).iter().zip(grads(&teacher)).zip(student) {
            for ((a, t), s) in g.iter().zip(gt).zip(gs) {
                assert!((a - (t + s)).abs() <= 1e-6, "{name}: {a} vs {t} + {s}");
            }
        }
    }
}

#[test]
fn teacher_receives_no_gradient_from_the_distillation_loss() {
    let (x, _) = batch(8, 2);
    let mut touched = 0;
    for (name, grad) in student_only_grads(3, &x, true) {
        // skippable blocks and mode-0 norms only run in the teacher
        if name.contains(".block1.") || name.contains(".set0.") {
            assert!(grad.iter().all(|&v| v == 0.0), "{name} got a student gradient");
        } else if grad.iter().any(|&v| v != 0.0) {
            touched += 1;
        }
    }
    assert!(touched > 0);
}

#[test]
fn norm_statistics_follow_the_stage_mode() {
    let (x, _) = batch(8, 3);
    for skip in enumerate_subnets(4) {
        let mut net = micro_net(4);
        let before = values(&net);
        let mut t = Tape::new();
        let xv = t.input(x.clone());
        net.forward(&mut t, xv, &skip, true).unwrap();
        for ((name, old), (_, new)) in before.iter().zip(values(&net)) {
            if !name.contains("running") || !name.starts_with("stage") {
                continue;
            }
            let stage: usize = name[5..6].parse().unwrap();
            let block: usize = name.split(".block").nth(1).unwrap()[..1].parse().unwrap();
            let ran = block == 0 || !skip.is_skipped(stage);
            let selected = match () {
                _ if name.contains(".set0.") => ran && !skip.is_skipped(stage),
                _ if name.contains(".set1.") => ran && skip.is_skipped(stage),
                _ => ran,
            };
            if selected {
                assert_ne!(old, &new, "{skip}: {name} should move");
            } else {
                assert_eq!(old.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                    new.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), "{skip}: {name} must not move");
            }
        }
    }
}

#[test]
fn one_step_runs_two_forwards_and_two_backwards() {
    let (x, y) = batch(8, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for strategy in DistillStrategy::ALL {
        let mut net = micro_net(1);
        let mut trainer = Trainer::new(&net, recipe(strategy), 10).unwrap();
        let r = trainer.step(&mut net, &x, &y, &mut rng).unwrap();
        let expected = if strategy == DistillStrategy::Vanilla { 1 } else { 2 };
        assert_eq!((r.forwards, r.backwards), (expected, expected), "{strategy}");
        assert_eq!(trainer.steps_done(), 1);
    }
}

#[test]
fn loss_decreases_over_two_hundred_steps() {
    let (x, y) = batch(32, 5);
    let mut net = micro_net(2);
    let r = TrainRecipe {
        lr: 0.05,
        warmup_epochs: 0,
        ..recipe(DistillStrategy::Ours)
    };
    let mut trainer = Trainer::new(&net, r, 200).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let reports: Vec<_> = (0..200).map(|_| trainer.step(&mut net, &x, &y, &mut rng).unwrap()).collect();
    let mean = |s: &[adn_core::training::StepReport]| {
        s.iter().map(|r| (r.loss_super + r.loss_base) as f64).sum::<f64>() / s.len() as f64
    };
    let (first, last) = (mean(&reports[..10]), mean(&reports[190..]));
    assert!(last < 0.5 * first, "loss {first} -> {last}");
}

#[test]
fn feature_kl_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let shapes = [[3usize, 2, 2, 2], [3, 4, 1, 1]];
    let teacher: Vec<Tensor> = shapes.iter().map(|s| Tensor::randn(s, 1.0, &mut rng)).collect();
    let student: Vec<Tensor> = shapes.iter().map(|s| Tensor::randn(s, 1.0, &mut rng)).collect();
    for temp in [1.0f32, 2.5] {
        let mut tape = Tape::new();
        let vars = student.iter().map(|s| tape.input(s.clone())).collect();
        let got = feature_kl(&mut tape, &teacher, &adn_core::adaptive::StageFeatures(vars), temp).unwrap();
        let got = tape.value(got).data()[0] as f64;

        let t = temp as f64;
        let mut want = 0.0;
        for (a, b) in teacher.iter().zip(&student) {
            let n = a.batch();
            for i in 0..n {
                let softmax = |row: &[f32]| {
                    let z: Vec<f64> = row.iter().map(|&v| v as f64 / t).collect();
                    let m = z.iter().cloned().fold(f64::MIN, f64::max);
                    let s: f64 = z.iter().map(|v| (v - m).exp()).sum();
                    z.iter().map(|v| (v - m).exp() / s).collect::<Vec<_>>()
                };
                let (p, q) = (softmax(a.sample(i)), softmax(b.sample(i)));
                want += t * t * p.iter().zip(&q).map(|(p, q)| p * (p.ln() - q.ln())).sum::<f64>() / n as f64;
            }
        }
        assert!((got - want).abs() < 1e-5 * want.max(1.0), "T={temp}: {got} vs {want}");
    }
}

#[test]
fn same_seed_gives_identical_checkpoint_and_log() {
    let (set, stats) = shapes(24, 6);
    let (val, _) = shapes(12, 7);
    let val = adn_core::eval::TensorDataset::from_set(&val, &stats).unwrap();
    let run = |seed: u64| {
        let dir = tempfile::tempdir().unwrap();
        let mut net = micro_net(seed);
        let r = TrainRecipe {
            epochs: 2,
            seed,
            ..recipe(DistillStrategy::BothRandom)
        };
        train(&mut net, &set, Some(&val), &stats, &r, Some(dir.path()), &mut |_| {}).unwrap();
        let ckpt = std::fs::read(dir.path().join(CHECKPOINT_FILE)).unwrap();
        let log = std::fs::read_to_string(dir.path().join(TRAIN_LOG_FILE)).unwrap();
        let log: Vec<String> = log
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect();
        (ckpt, log)
    };
    let a = run(11);
    assert_eq!(a, run(11));
    assert_eq!(a.1.len(), 3);
    assert_ne!(a.0, run(12).0);
}
