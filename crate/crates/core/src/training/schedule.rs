use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Step-schedule decay points, as fractions of the post-warmup phase.
const STEP_MILESTONES: [f64; 2] = [0.5, 0.75];
const STEP_GAMMA: f64 = 0.1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Cosine,
    /// ×0.1 at half and at three quarters of the post-warmup steps.
    Step,
}

impl LrSchedule {
    pub fn lr(self, step: usize, total_steps: usize, base_lr: f64, warmup_steps: usize) -> f64 {
        match self {
            LrSchedule::Cosine => cosine_lr(step, total_steps, base_lr, warmup_steps),
            LrSchedule::Step => step_lr(step, total_steps, base_lr, warmup_steps),
        }
    }
}

impl FromStr for LrSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Self::Cosine),
            "step" => Ok(Self::Step),
            _ => Err(Error::Config(format!("unknown lr schedule {s:?} (cosine, step)"))),
        }
    }
}

impl fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Cosine => "cosine",
            Self::Step => "step",
        })
    }
}

fn warmup(step: usize, base_lr: f64, warmup_steps: usize) -> Option<f64> {
    (step < warmup_steps).then(|| base_lr * step as f64 / warmup_steps as f64)
}

/// Linear warmup to `base_lr` over `warmup_steps`, then
/// `0.5·base_lr·(1 + cos(π·progress))`.
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64, warmup_steps: usize) -> f64 {
    if let Some(lr) = warmup(step, base_lr, warmup_steps) {
        return lr;
    }
    let span = total_steps.saturating_sub(warmup_steps).max(1) as f64;
    let progress = ((step - warmup_steps) as f64 / span).min(1.0);
    0.5 * base_lr * (1.0 + (PI * progress).cos())
}

/// Linear warmup, then piecewise-constant decay.
pub fn step_lr(step: usize, total_steps: usize, base_lr: f64, warmup_steps: usize) -> f64 {
    if let Some(lr) = warmup(step, base_lr, warmup_steps) {
        return lr;
    }
    let span = total_steps.saturating_sub(warmup_steps).max(1) as f64;
    let progress = (step - warmup_steps) as f64 / span;
    let drops = STEP_MILESTONES.iter().filter(|&&m| progress >= m).count();
    base_lr * STEP_GAMMA.powi(drops as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_landmarks() {
        assert_eq!(cosine_lr(10, 110, 0.1, 10), 0.1);
        assert!(cosine_lr(110, 110, 0.1, 10).abs() < 1e-9);
        assert!((cosine_lr(60, 110, 0.1, 10) - 0.05).abs() < 1e-12);
        assert_eq!(cosine_lr(5, 110, 0.1, 10), 0.05);
        assert_eq!(cosine_lr(0, 100, 0.1, 0), 0.1);
    }

    #[test]
    fn cosine_is_monotone_after_warmup() {
        let lrs: Vec<f64> = (10..=110).map(|s| cosine_lr(s, 110, 1.0, 10)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn step_drops() {
        assert_eq!(step_lr(0, 100, 1.0, 0), 1.0);
        assert!((step_lr(50, 100, 1.0, 0) - 0.1).abs() < 1e-12);
        assert!((step_lr(80, 100, 1.0, 0) - 0.01).abs() < 1e-12);
    }
}
