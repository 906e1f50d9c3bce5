//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Environment:
//! - `ADN_CIFAR10_DIR`: CIFAR-10 binary batches; enables the full-size run
//!   of criteria 4 to 6 (several CPU hours).
//! - `ADN_ACCEPTANCE_STRICT=1`: exit non-zero when any criterion fails.

use std::path::{Path, PathBuf};
use std::time::Instant;

use adn_core::adaptive::{
    enumerate_subnets, AdaptiveDepthNetwork, Architecture, ModelSpec, ParamScope, SkipConfig, SplitRatio,
};
use adn_core::autodiff::Tape;
use adn_core::data::{synthetic_shapes, ChannelStats, DatasetKind, LabeledImageSet};
use adn_core::eval::{evaluate, evaluate_all, residual_profile, SubnetRecord, TensorDataset};
use adn_core::gradcheck::run_suite;
use adn_core::training::{train, DistillStrategy, TrainRecipe, CHECKPOINT_FILE, TRAIN_LOG_FILE};

const MNIST_FIXTURE: &str = "tests/data/mnist";
const STAGES: usize = 4;
/// Batches used for residual ratios.
const PROFILE_BATCHES: usize = 4;

struct Outcome {
    passed: Option<bool>,
    detail: String,
}

impl Outcome {
    fn check(passed: bool, detail: impl Into<String>) -> Self {
        Outcome {
            passed: Some(passed),
            detail: detail.into(),
        }
    }

    fn skipped(detail: impl Into<String>) -> Self {
        Outcome {
            passed: None,
            detail: detail.into(),
        }
    }
}

fn report(id: &str, name: &str, out: &Outcome) {
    let verdict = match out.passed {
        Some(true) => "PASS",
        Some(false) => "FAIL",
        None => "SKIP",
    };
    println!("criterion {id}: {verdict} {name}: {}", out.detail);
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(MNIST_FIXTURE)
}

/// `0.1234` as `12.34`.
fn pts(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

fn gradcheck() -> Outcome {
    let start = Instant::now();
    let suite = match run_suite(None) {
        Ok(s) => s,
        Err(e) => return Outcome::check(false, e.to_string()),
    };
    let secs = start.elapsed().as_secs_f64();
    let worst = suite.ops.iter().map(|o| o.max_rel_error).fold(0.0, f64::max);
    let fault_caught = run_suite(Some("conv2d"))
        .map(|s| s.failures().iter().any(|f| f.op == "conv2d"))
        .unwrap_or(false);
    Outcome::check(
        suite.passed() && secs < 60.0 && fault_caught,
        format!(
            "{} operations, worst relative error {worst:.2e}, {secs:.2}s, injected fault detected: {fault_caught}",
            suite.ops.len()
        ),
    )
}

/// Per-sample multiply-accumulates of a basic-block ResNet, layer by layer
/// from the architecture description alone.
fn resnet_macs_oracle(spec: &ModelSpec, skip: &SkipConfig) -> u64 {
    let Architecture::Resnet {
        stem_width,
        stage_blocks,
        widths,
        ratio,
    } = &spec.arch
    else {
        unreachable!("resnet only")
    };
    let conv = |cin: usize, cout: usize, k: usize, hw: usize| (cin * cout * k * k * hw * hw) as u64;
    let mut hw = spec.image_size;
    let mut total = conv(spec.in_channels, *stem_width, 3, hw);
    let mut cin = *stem_width;
    for (s, (&blocks, &width)) in stage_blocks.iter().zip(widths).enumerate() {
        let (mandatory, _) = ratio.split(blocks).unwrap();
        for b in 0..blocks {
            if b >= mandatory && skip.is_skipped(s) {
                continue;
            }
            let stride = if s > 0 && b == 0 { 2 } else { 1 };
            let out_hw = (hw + 2 - 3) / stride + 1;
            total += conv(cin, width, 3, out_hw) + conv(width, width, 3, out_hw);
            if stride != 1 || cin != width {
                total += conv(cin, width, 1, out_hw);
            }
            hw = out_hw;
            cin = width;
        }
    }
    total + (cin * spec.num_classes) as u64
}

fn combinatorial_selection() -> Outcome {
    let spec = ModelSpec::resnet_tiny(10);
    let run = || -> adn_core::Result<Outcome> {
        let mut net = AdaptiveDepthNetwork::new(spec.clone(), 0)?;
        let set = synthetic_shapes(20, 10, 32, 0)?;
        let data = TensorDataset::from_set(&set, &ChannelStats::compute(&set)?)?;
        let rows = evaluate_all(&mut net, &data)?;
        let full = net.flops(&SkipConfig::super_net(STAGES))?;
        let mut mismatches = Vec::new();
        for r in &rows {
            let oracle = resnet_macs_oracle(&spec, &r.skip);
            let mut additive = full;
            for s in (0..STAGES).filter(|&s| r.skip.is_skipped(s)) {
                additive -= net.skippable_flops(s)?;
            }
            if r.flops != oracle || r.flops != additive {
                mismatches.push(format!("{} ({} vs oracle {oracle}, additive {additive})", r.skip, r.flops));
            }
        }
        let mut skips: Vec<String> = rows.iter().map(|r| r.skip.to_string()).collect();
        skips.sort();
        skips.dedup();
        Ok(Outcome::check(
            rows.len() == 16 && skips.len() == 16 && mismatches.is_empty(),
            format!(
                "{} rows ({} distinct), FLOPs mismatches: {}",
                rows.len(),
                skips.len(),
                if mismatches.is_empty() { "none".into() } else { mismatches.join(", ") }
            ),
        ))
    };
    run().unwrap_or_else(|e| Outcome::check(false, e.to_string()))
}

/// Running statistics of one norm set, as bits.
fn norm_buffers(net: &AdaptiveDepthNetwork, set: &str) -> Vec<u32> {
    net.store()
        .sorted()
        .filter(|(name, _)| name.contains(set) && name.contains("running"))
        .flat_map(|(_, e)| e.value.data().iter().map(|v| v.to_bits()))
        .collect()
}

fn norm_isolation() -> Outcome {
    let run = || -> adn_core::Result<Outcome> {
        let spec = ModelSpec::resnet_tiny(4).with_input(3, 16);
        let mut net = AdaptiveDepthNetwork::new(spec, 1)?;
        let (set, stats) = {
            let s = synthetic_shapes(64, 4, 16, 1)?;
            let st = ChannelStats::compute(&s)?;
            (s, st)
        };
        let recipe = TrainRecipe {
            epochs: 1,
            batch_size: 16,
            ..TrainRecipe::default()
        };
        train(&mut net, &set, None, &stats, &recipe, None, &mut |_| {})?;
        let data = TensorDataset::from_set(&set, &stats)?;
        let (x, _) = data.slice(0, 16);
        let mut isolated = true;
        for (skip, other) in [(SkipConfig::super_net(STAGES), ".set1."), (SkipConfig::base_net(STAGES), ".set0.")] {
            let mine = if other == ".set1." { ".set0." } else { ".set1." };
            let (before, mine_before) = (norm_buffers(&net, other), norm_buffers(&net, mine));
            let mut tape = Tape::new();
            let xv = tape.input(x.clone());
            net.forward(&mut tape, xv, &skip, true)?;
            isolated &= norm_buffers(&net, other) == before && norm_buffers(&net, mine) != mine_before;
        }
        let tiny = AdaptiveDepthNetwork::new(ModelSpec::resnet_tiny(10), 0)?;
        let extra = tiny.second_norm_set_params() as f64;
        let whole = tiny.param_count(ParamScope::Whole)? as f64;
        let overhead = extra / whole;
        Ok(Outcome::check(
            isolated && overhead < 0.01,
            format!(
                "mode-0 and mode-1 statistics isolated: {isolated}, second norm set {extra} of {whole} parameters ({:.3}%)",
                100.0 * overhead
            ),
        ))
    };
    run().unwrap_or_else(|e| Outcome::check(false, e.to_string()))
}

/// A trained model scored on every sub-network, with super-net residual
/// ratio means.
#[derive(Clone)]
struct Scored {
    records: Vec<SubnetRecord>,
    mandatory: f64,
    skippable: f64,
    minutes: f64,
}

/// An ADN model and its vanilla twin.
struct MainResult {
    adn: Scored,
    vanilla: Scored,
}

fn top1(records: &[SubnetRecord], skip: &SkipConfig) -> f64 {
    records.iter().find(|r| &r.skip == skip).expect("every config scored").top1
}

/// Trains `spec` with `recipe`; the vanilla twin drops switchable norms and
/// trains the super-net only.
fn train_scored(
    spec: &ModelSpec,
    recipe: &TrainRecipe,
    vanilla: bool,
    train_set: &LabeledImageSet,
    test_set: &LabeledImageSet,
) -> adn_core::Result<Scored> {
    let start = Instant::now();
    let stats = ChannelStats::compute(train_set)?;
    let test = TensorDataset::from_set(test_set, &stats)?;
    let mut net = AdaptiveDepthNetwork::new(spec.clone().with_switchable_norms(!vanilla), recipe.seed)?;
    let recipe = TrainRecipe {
        distill_strategy: if vanilla { DistillStrategy::Vanilla } else { recipe.distill_strategy },
        ..recipe.clone()
    };
    train(&mut net, train_set, None, &stats, &recipe, None, &mut |_| {})?;
    let records = evaluate_all(&mut net, &test)?;
    let profile = residual_profile(&mut net, &SkipConfig::super_net(STAGES), &test, PROFILE_BATCHES)?;
    Ok(Scored {
        records,
        mandatory: profile.mean_ratio(false).unwrap_or(f64::NAN),
        skippable: profile.mean_ratio(true).unwrap_or(f64::NAN),
        minutes: start.elapsed().as_secs_f64() / 60.0,
    })
}

fn main_result(r: &MainResult) -> Outcome {
    let (sup, base) = (SkipConfig::super_net(STAGES), SkipConfig::base_net(STAGES));
    let (adn, vanilla) = (&r.adn.records, &r.vanilla.records);
    let (a_sup, a_base, v_sup) = (top1(adn, &sup), top1(adn, &base), top1(vanilla, &sup));
    let worst_mid = adn
        .iter()
        .filter(|x| x.skip != sup && x.skip != base)
        .min_by(|a, b| a.top1.total_cmp(&b.top1))
        .expect("intermediate configs");
    let a = a_sup - v_sup >= -0.005;
    let b = a_sup - a_base <= 0.04;
    let c = worst_mid.top1 >= a_base - 0.015;
    Outcome::check(
        a && b && c,
        format!(
            "(a) {a}: super-net {} vs vanilla twin {}; (b) {b}: base-net {}; (c) {c}: worst intermediate {} {}; {:.1} min",
            pts(a_sup),
            pts(v_sup),
            pts(a_base),
            worst_mid.skip,
            pts(worst_mid.top1),
            r.adn.minutes + r.vanilla.minutes
        ),
    )
}

fn residual_ratios(r: &MainResult) -> Outcome {
    let (mandatory, skippable) = (r.adn.mandatory, r.adn.skippable);
    Outcome::check(
        skippable < mandatory && skippable < r.vanilla.skippable,
        format!(
            "skippable {skippable:.3} < mandatory {mandatory:.3}, < vanilla twin skippable {:.3}",
            r.vanilla.skippable
        ),
    )
}

fn skipping_robustness(r: &MainResult) -> Outcome {
    let sup = SkipConfig::super_net(STAGES);
    let (adn, vanilla) = (&r.adn.records, &r.vanilla.records);
    let (a_sup, v_sup) = (top1(adn, &sup), top1(vanilla, &sup));
    let mut losing = Vec::new();
    let wins = enumerate_subnets(STAGES)
        .into_iter()
        .filter(|skip| {
            let won = v_sup - top1(vanilla, skip) > a_sup - top1(adn, skip);
            if !won {
                losing.push(skip.to_string());
            }
            won
        })
        .count();
    Outcome::check(
        wins >= 14,
        format!("vanilla twin loses more in {wins}/16 configs (not: {})", losing.join(" ")),
    )
}

/// Micro ResNet used for the MNIST runs: four stages of two blocks.
fn mnist_spec(width: usize) -> ModelSpec {
    ModelSpec {
        arch: Architecture::Resnet {
            stem_width: width,
            stage_blocks: vec![2; STAGES],
            widths: vec![width, 2 * width, 4 * width, 8 * width],
            ratio: SplitRatio::Default,
        },
        in_channels: 1,
        image_size: 14,
        num_classes: 10,
        switchable_norms: true,
    }
}

/// MNIST fixture at 14×14.
fn mnist_fixture() -> adn_core::Result<(LabeledImageSet, LabeledImageSet)> {
    let (train_set, test_set) = DatasetKind::Mnist.load(&fixture(), 1, 28, 0)?;
    Ok((train_set.downsample2(), test_set.downsample2()))
}

const MAIN_WIDTH: usize = 8;

fn mnist_recipe(seed: u64) -> TrainRecipe {
    TrainRecipe {
        batch_size: 64,
        crop_pad: 1,
        seed,
        ..TrainRecipe::mnist()
    }
}

/// Default recipe and the same recipe with feature KL, each paired with
/// one shared vanilla twin.
fn mnist_pairs() -> adn_core::Result<[MainResult; 2]> {
    let (train_set, test_set) = mnist_fixture()?;
    let (spec, recipe) = (mnist_spec(MAIN_WIDTH), mnist_recipe(0));
    let vanilla = train_scored(&spec, &recipe, true, &train_set, &test_set)?;
    let with_features = TrainRecipe {
        feature_kl: true,
        ..recipe.clone()
    };
    Ok([
        MainResult {
            adn: train_scored(&spec, &recipe, false, &train_set, &test_set)?,
            vanilla: vanilla.clone(),
        },
        MainResult {
            adn: train_scored(&spec, &with_features, false, &train_set, &test_set)?,
            vanilla,
        },
    ])
}

fn cifar_pair(dir: &Path) -> adn_core::Result<MainResult> {
    let (train_set, test_set) = DatasetKind::Cifar10.load(dir, 3, 32, 0)?;
    let (spec, recipe) = (ModelSpec::resnet_tiny(10), TrainRecipe::default());
    Ok(MainResult {
        adn: train_scored(&spec, &recipe, false, &train_set, &test_set)?,
        vanilla: train_scored(&spec, &recipe, true, &train_set, &test_set)?,
    })
}

const ABLATION_SEEDS: [u64; 3] = [0, 1, 2];
const ABLATION_PER_CLASS: usize = 100;
const ABLATION_EPOCHS: usize = 8;

fn strategy_ablation() -> Outcome {
    let run = || -> adn_core::Result<Outcome> {
        let (train_set, test_set) = mnist_fixture()?;
        let train_set = train_set.take_per_class(ABLATION_PER_CLASS);
        let stats = ChannelStats::compute(&train_set)?;
        let test = TensorDataset::from_set(&test_set, &stats)?;
        let (sup, base) = (SkipConfig::super_net(STAGES), SkipConfig::base_net(STAGES));
        let mut means = Vec::new();
        for strategy in [
            DistillStrategy::Ours,
            DistillStrategy::TeacherRandom,
            DistillStrategy::StudentRandom,
            DistillStrategy::BothRandom,
        ] {
            let (mut s, mut b) = (0.0, 0.0);
            for &seed in &ABLATION_SEEDS {
                let mut net = AdaptiveDepthNetwork::new(mnist_spec(MAIN_WIDTH), seed)?;
                let recipe = TrainRecipe {
                    epochs: ABLATION_EPOCHS,
                    distill_strategy: strategy,
                    ..mnist_recipe(seed)
                };
                train(&mut net, &train_set, None, &stats, &recipe, None, &mut |_| {})?;
                s += evaluate(&mut net, &sup, &test)?;
                b += evaluate(&mut net, &base, &test)?;
            }
            let n = ABLATION_SEEDS.len() as f64;
            means.push((strategy, s / n, b / n));
        }
        let (_, ours_s, ours_b) = means[0];
        let ok = means[1..].iter().all(|&(_, s, b)| ours_s >= s && ours_b >= b);
        let detail = means
            .iter()
            .map(|(st, s, b)| format!("{st} {}/{}", pts(*s), pts(*b)))
            .collect::<Vec<_>>()
            .join(", ");
        Ok(Outcome::check(ok, format!("mean super/base top-1 over 3 seeds: {detail}")))
    };
    run().unwrap_or_else(|e| Outcome::check(false, e.to_string()))
}

fn determinism() -> Outcome {
    let run = || -> Result<Outcome, Box<dyn std::error::Error>> {
        let set = synthetic_shapes(96, 4, 16, 3)?;
        let stats = ChannelStats::compute(&set)?;
        let val = TensorDataset::from_set(&synthetic_shapes(32, 4, 16, 4)?, &stats)?;
        let spec = ModelSpec::resnet_tiny(4).with_input(3, 16);
        let once = || -> Result<(Vec<u8>, Vec<String>), Box<dyn std::error::Error>> {
            let dir = tempfile::tempdir()?;
            let mut net = AdaptiveDepthNetwork::new(spec.clone(), 5)?;
            let recipe = TrainRecipe {
                epochs: 2,
                batch_size: 16,
                distill_strategy: DistillStrategy::BothRandom,
                seed: 5,
                ..TrainRecipe::default()
            };
            train(&mut net, &set, Some(&val), &stats, &recipe, Some(dir.path()), &mut |_| {})?;
            let ckpt = std::fs::read(dir.path().join(CHECKPOINT_FILE))?;
            let log = std::fs::read_to_string(dir.path().join(TRAIN_LOG_FILE))?;
            // drop the trailing wall-clock column
            let rows = log.lines().map(|l| l.rsplit_once(',').map_or(l, |p| p.0).to_string()).collect();
            Ok((ckpt, rows))
        };
        let (a, b) = (once()?, once()?);
        Ok(Outcome::check(
            a == b,
            format!(
                "checkpoints identical: {}, logs identical: {} ({} bytes, {} rows)",
                a.0 == b.0,
                a.1 == b.1,
                a.0.len(),
                a.1.len()
            ),
        ))
    };
    run().unwrap_or_else(|e| Outcome::check(false, e.to_string()))
}

fn main() {
    let mut outcomes: Vec<Outcome> = Vec::new();
    let mut emit = |id: &str, name: &str, out: Outcome| {
        report(id, name, &out);
        outcomes.push(out);
    };
    emit("1", "gradient correctness", gradcheck());
    emit("2", "combinatorial selection", combinatorial_selection());
    emit("3", "norm isolation", norm_isolation());

    match mnist_pairs() {
        Ok(pairs) => {
            for (r, kl) in pairs.iter().zip(["output KL", "output and feature KL"]) {
                emit("4", &format!("main result (MNIST, 20 epochs, {kl})"), main_result(r));
                emit("5", &format!("residual ratios (MNIST, {kl})"), residual_ratios(r));
                emit("6", &format!("skipping robustness (MNIST, {kl})"), skipping_robustness(r));
            }
        }
        Err(e) => {
            for (id, name) in [("4", "main result (MNIST)"), ("5", "residual ratios"), ("6", "skipping robustness")] {
                emit(id, name, Outcome::check(false, e.to_string()));
            }
        }
    }
    match std::env::var_os("ADN_CIFAR10_DIR") {
        Some(dir) => match cifar_pair(Path::new(&dir)) {
            Ok(r) => {
                emit("4", "main result (CIFAR-10, 60 epochs)", main_result(&r));
                emit("5", "residual ratios (CIFAR-10)", residual_ratios(&r));
                emit("6", "skipping robustness (CIFAR-10)", skipping_robustness(&r));
            }
            Err(e) => emit("4", "main result (CIFAR-10)", Outcome::check(false, e.to_string())),
        },
        None => emit("4", "main result (CIFAR-10, 60 epochs)", Outcome::skipped("set ADN_CIFAR10_DIR to run")),
    }
    emit("7", "strategy ablation (MNIST)", strategy_ablation());
    emit("8", "determinism", determinism());

    let failed = outcomes.iter().filter(|o| o.passed == Some(false)).count();
    let count = |p: Option<bool>| outcomes.iter().filter(|o| o.passed == p).count();
    println!(
        "acceptance: {} passed, {failed} failed, {} skipped",
        count(Some(true)),
        count(None)
    );
    let strict = std::env::var("ADN_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
