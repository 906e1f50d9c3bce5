use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adn_core::adaptive::{AdaptiveDepthNetwork, ModelSpec, SkipConfig};
use adn_core::data::{ChannelStats, LabeledImageSet};
use adn_core::eval::{
    evaluate, evaluate_all, pareto_report, residual_profile, write_profile_csv, write_subnets_csv,
    ParetoRecord, SubnetRecord, TensorDataset,
};
use adn_core::gradcheck::run_suite;
use adn_core::training::{train as train_net, DistillStrategy, CHECKPOINT_FILE};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const MANIFEST_FILE: &str = "manifest.json";
/// Evaluation batches used for residual profiles.
const PROFILE_BATCHES: usize = 4;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(adn_core::Error),
}

impl CliError {
    pub fn is_usage(&self) -> bool {
        match self {
            CliError::Usage(_) => true,
            CliError::Core(e) => matches!(
                e,
                adn_core::Error::Config(_)
                    | adn_core::Error::SkipParse(_)
                    | adn_core::Error::SkipLength { .. }
                    | adn_core::Error::InvalidTemperature(_)
            ),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<adn_core::Error> for CliError {
    fn from(e: adn_core::Error) -> Self {
        CliError::Core(e)
    }
}

type CliResult<T> = Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(adn_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Echo of the effective configuration, written into every run directory.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: RunConfig,
    pub spec: ModelSpec,
    pub stats: ChannelStats,
}

impl Manifest {
    fn new(command: &str, config: &RunConfig, spec: &ModelSpec, stats: &ChannelStats) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed: config.recipe.seed,
            config: config.clone(),
            spec: spec.clone(),
            stats: stats.clone(),
        }
    }

    fn write(&self, dir: &Path) -> CliResult<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serialises");
        fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))
    }

    fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| {
            CliError::Core(adn_core::Error::Format {
                path: path.to_path_buf(),
                msg: e.to_string(),
            })
        })
    }
}

/// A fresh directory `<out>/<command>-<model>-<dataset>-s<seed>[-k]`; never
/// reuses an existing one.
fn new_run_dir(config: &RunConfig, command: &str) -> CliResult<PathBuf> {
    let out = &config.out_dir;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let stem = format!(
        "{command}-{}-{}-s{}",
        config.model, config.dataset, config.recipe.seed
    );
    for k in 1.. {
        let name = if k == 1 { stem.clone() } else { format!("{stem}-{k}") };
        let dir = out.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(io_err(&dir, e)),
        }
    }
    unreachable!()
}

fn truncate(set: LabeledImageSet, limit: Option<usize>) -> LabeledImageSet {
    match limit {
        Some(n) if n < set.len() => {
            let idx: Vec<usize> = (0..n).collect();
            set.select(&idx, set.split)
        }
        _ => set,
    }
}

fn load_data(config: &RunConfig) -> CliResult<(LabeledImageSet, LabeledImageSet)> {
    let (c, size, _) = config.input();
    let (train, test) = config
        .dataset
        .load(&config.data_dir, c, size, config.recipe.seed)?;
    Ok((
        truncate(train, config.max_train_samples),
        truncate(test, config.max_eval_samples),
    ))
}

/// Trains one network into `dir`; returns it with the evaluation tensors.
fn train_into(config: &RunConfig, dir: &Path, command: &str) -> CliResult<(AdaptiveDepthNetwork, TensorDataset)> {
    let spec = config.spec()?;
    let (train_set, test_set) = load_data(config)?;
    let stats = ChannelStats::compute(&train_set)?;
    Manifest::new(command, config, &spec, &stats).write(dir)?;
    let eval = TensorDataset::from_set(&test_set, &stats)?;
    let mut net = AdaptiveDepthNetwork::new(spec, config.recipe.seed)?;
    log::info!(
        "training {} on {} ({} images, {} epochs, strategy {})",
        config.model,
        config.dataset,
        train_set.len(),
        config.recipe.epochs,
        config.recipe.distill_strategy
    );
    train_net(
        &mut net,
        &train_set,
        Some(&eval),
        &stats,
        &config.recipe,
        Some(dir),
        &mut |row| {
            log::info!(
                "epoch {} loss_super {:.4} loss_base {:.4} acc FFFF {} TTTT {}",
                row.epoch,
                row.loss_super,
                row.loss_base,
                pct(row.acc_supernet),
                pct(row.acc_basenet)
            )
        },
    )?;
    Ok((net, eval))
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |a| format!("{:.2}%", 100.0 * a))
}

pub fn train(config: &RunConfig) -> CliResult<ExitCode> {
    let dir = new_run_dir(config, "train")?;
    train_into(config, &dir, "train")?;
    println!("{}", dir.join(CHECKPOINT_FILE).display());
    Ok(ExitCode::SUCCESS)
}

/// Network, evaluation data and effective config for a saved checkpoint.
fn open_checkpoint(
    pairs: &[(String, String)],
    checkpoint: &Path,
) -> CliResult<(AdaptiveDepthNetwork, TensorDataset, RunConfig)> {
    let file = if checkpoint.is_dir() {
        checkpoint.join(CHECKPOINT_FILE)
    } else {
        checkpoint.to_path_buf()
    };
    let dir = file.parent().unwrap_or(Path::new("."));
    let manifest = Manifest::read(&dir.join(MANIFEST_FILE))?;
    let mut config = manifest.config;
    for (k, v) in pairs {
        config.set(k, v)?;
    }
    let net = AdaptiveDepthNetwork::from_checkpoint(manifest.spec, &file)?;
    let (_, test_set) = load_data(&config)?;
    let data = TensorDataset::from_set(&test_set, &manifest.stats)?;
    Ok((net, data, config))
}

fn print_rows(rows: &[ParetoRecord]) {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let _ = writeln!(out, "skip,flops,params,top1,pareto");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{:.4},{}", r.skip, r.flops, r.params, r.top1, r.pareto);
    }
}

pub fn eval(
    pairs: &[(String, String)],
    checkpoint: &Path,
    skip: Option<&str>,
    all: bool,
) -> CliResult<ExitCode> {
    if skip.is_none() && !all {
        return Err(CliError::Usage("eval needs --skip <config> or --all".into()));
    }
    let (mut net, data, config) = open_checkpoint(pairs, checkpoint)?;
    let records = match skip {
        Some(s) => {
            let skip = SkipConfig::parse_for(s, net.num_stages())?;
            vec![SubnetRecord {
                flops: net.flops(&skip)?,
                params: net.param_count(adn_core::adaptive::ParamScope::Config(&skip))?,
                top1: evaluate(&mut net, &skip, &data)?,
                skip,
            }]
        }
        None => evaluate_all(&mut net, &data)?,
    };
    let rows = pareto_report(&records);
    let dir = new_run_dir(&config, "eval")?;
    Manifest::new("eval", &config, net.spec(), &checkpoint_stats(checkpoint)?).write(&dir)?;
    write_subnets_csv(&dir.join("subnets.csv"), &rows)?;
    print_rows(&rows);
    Ok(ExitCode::SUCCESS)
}

fn checkpoint_stats(checkpoint: &Path) -> CliResult<ChannelStats> {
    let dir = if checkpoint.is_dir() {
        checkpoint
    } else {
        checkpoint.parent().unwrap_or(Path::new("."))
    };
    Ok(Manifest::read(&dir.join(MANIFEST_FILE))?.stats)
}

pub fn profile(pairs: &[(String, String)], checkpoint: &Path, skip: Option<&str>) -> CliResult<ExitCode> {
    let (mut net, data, config) = open_checkpoint(pairs, checkpoint)?;
    let skip = match skip {
        Some(s) => SkipConfig::parse_for(s, net.num_stages())?,
        None => SkipConfig::super_net(net.num_stages()),
    };
    let profile = residual_profile(&mut net, &skip, &data, PROFILE_BATCHES)?;
    let dir = new_run_dir(&config, "profile")?;
    Manifest::new("profile", &config, net.spec(), &checkpoint_stats(checkpoint)?).write(&dir)?;
    write_profile_csv(&dir.join("profile.csv"), &profile)?;
    println!("stage,block,skippable,ratio");
    for b in &profile.blocks {
        println!("{},{},{},{:.6}", b.stage, b.block, b.skippable, b.ratio);
    }
    let (mandatory, skippable) = (profile.mean_ratio(false), profile.mean_ratio(true));
    match (mandatory, skippable) {
        (Some(m), Some(s)) => println!(
            "summary: mandatory_mean={m:.6} skippable_mean={s:.6} ratio={:.4} {}",
            s / m,
            if s < m { "PASS" } else { "FAIL" }
        ),
        _ => println!(
            "summary: mandatory_mean={} skippable_mean={} (no comparison for {skip})",
            fmt_opt(mandatory),
            fmt_opt(skippable)
        ),
    }
    Ok(ExitCode::SUCCESS)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.6}"))
}

/// One trained variant of an ablation grid.
#[derive(Debug, Serialize)]
struct AblationRow {
    grid: &'static str,
    /// Teacher/student column label.
    row: String,
    strategy: DistillStrategy,
    switchable_norms: bool,
    acc_supernet: f64,
    acc_basenet: f64,
}

fn ablation_variants(grid: &str) -> CliResult<Vec<(&'static str, String, DistillStrategy, bool)>> {
    let table3 = || {
        [(true, true), (true, false), (false, true), (false, false)]
            .into_iter()
            .map(|(distill, norms)| {
                let strategy = if distill { DistillStrategy::Ours } else { DistillStrategy::None };
                let label = format!(
                    "distill={} skip_aware_norms={}",
                    if distill { "on" } else { "off" },
                    if norms { "on" } else { "off" }
                );
                ("table3", label, strategy, norms)
            })
            .collect::<Vec<_>>()
    };
    let table4 = || {
        [
            ("FFFF/TTTT", DistillStrategy::Ours),
            ("FFFF/Random", DistillStrategy::StudentRandom),
            ("Random/TTTT", DistillStrategy::TeacherRandom),
            ("Random/Random", DistillStrategy::BothRandom),
        ]
        .into_iter()
        .map(|(label, s)| ("table4", label.to_string(), s, true))
        .collect::<Vec<_>>()
    };
    match grid {
        "table3" => Ok(table3()),
        "table4" => Ok(table4()),
        "all" => Ok(table3().into_iter().chain(table4()).collect()),
        _ => Err(CliError::Usage(format!(
            "unknown grid {grid:?} (table3, table4, all)"
        ))),
    }
}

pub fn ablate(config: &RunConfig, grid: &str) -> CliResult<ExitCode> {
    let variants = ablation_variants(grid)?;
    let dir = new_run_dir(config, "ablate")?;
    let mut rows = Vec::new();
    for (i, (table, label, strategy, norms)) in variants.into_iter().enumerate() {
        let mut cfg = config.clone();
        cfg.recipe.distill_strategy = strategy;
        cfg.switchable_norms = norms;
        let sub = dir.join(format!("{table}-{i}"));
        fs::create_dir_all(&sub).map_err(|e| io_err(&sub, e))?;
        log::info!("ablation {table}: {label}");
        let (mut net, data) = train_into(&cfg, &sub, "ablate")?;
        let n = net.num_stages();
        rows.push(AblationRow {
            grid: table,
            row: label,
            strategy,
            switchable_norms: norms,
            acc_supernet: evaluate(&mut net, &SkipConfig::super_net(n), &data)?,
            acc_basenet: evaluate(&mut net, &SkipConfig::base_net(n), &data)?,
        });
    }
    let path = dir.join("ablation.csv");
    let mut w = csv_writer(&path)?;
    println!("grid,row,strategy,switchable_norms,acc_supernet,acc_basenet");
    for r in &rows {
        w.serialize(r).map_err(|e| csv_err(&path, e))?;
        println!(
            "{},{},{},{},{:.4},{:.4}",
            r.grid, r.row, r.strategy, r.switchable_norms, r.acc_supernet, r.acc_basenet
        );
    }
    w.flush().map_err(|e| io_err(&path, e))?;
    Ok(ExitCode::SUCCESS)
}

fn csv_writer(path: &Path) -> CliResult<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_err(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    CliError::Core(adn_core::Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

pub fn gradcheck(fault: Option<&str>) -> CliResult<ExitCode> {
    let report = run_suite(fault)?;
    println!("{:<22} {:>12} {:>6}", "op", "max_rel_err", "checks");
    for r in &report.ops {
        println!(
            "{:<22} {:>12.3e} {:>6} {}",
            r.op,
            r.max_rel_error,
            r.checks,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    let failed: Vec<&str> = report.failures().iter().map(|r| r.op).collect();
    if failed.is_empty() {
        println!("gradcheck passed: {} operations", report.ops.len());
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("gradcheck failed: {}", failed.join(", "));
        Ok(ExitCode::from(1))
    }
}
