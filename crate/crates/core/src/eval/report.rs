use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adaptive::SkipConfig;
use crate::error::{Error, Result};

use super::BlockProfile;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubnetRecord {
    pub skip: SkipConfig,
    /// Per-sample multiply-accumulates.
    pub flops: u64,
    pub params: usize,
    /// Top-1 accuracy in `[0, 1]`.
    pub top1: f64,
}

/// A record with its Pareto flag; the `subnets.csv` row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoRecord {
    pub skip: SkipConfig,
    pub flops: u64,
    pub params: usize,
    pub top1: f64,
    pub pareto: bool,
}

/// Marks records no other record dominates (no more flops, no less
/// accuracy, one of them strictly) and sorts by flops, ties kept in input
/// order.
pub fn pareto_report(records: &[SubnetRecord]) -> Vec<ParetoRecord> {
    let dominated = |r: &SubnetRecord| {
        records.iter().any(|o| {
            o.flops <= r.flops && o.top1 >= r.top1 && (o.flops < r.flops || o.top1 > r.top1)
        })
    };
    let mut out: Vec<ParetoRecord> = records
        .iter()
        .map(|r| ParetoRecord {
            skip: r.skip.clone(),
            flops: r.flops,
            params: r.params,
            top1: r.top1,
            pareto: !dominated(r),
        })
        .collect();
    out.sort_by_key(|r| r.flops);
    out
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::format(path, e.to_string())
}

pub fn write_subnets_csv(path: &Path, rows: &[ParetoRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_subnets_csv(path: &Path) -> Result<Vec<ParetoRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| csv_err(path, e))
}

/// A `profile.csv` row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub stage: usize,
    pub block: usize,
    pub skippable: bool,
    pub ratio: f64,
}

pub fn write_profile_csv(path: &Path, profile: &BlockProfile) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for b in &profile.blocks {
        let row = ProfileRow {
            stage: b.stage,
            block: b.block,
            skippable: b.skippable,
            ratio: b.ratio,
        };
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
