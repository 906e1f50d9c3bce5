use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

use super::{LabeledImageSet, Split};

const BACKGROUND: f32 = 40.0;
const FOREGROUND: f32 = 210.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticOptions {
    pub channels: usize,
    /// Pixel noise standard deviation, in `u8` units.
    pub noise: f32,
    /// Maximum random shift of the pattern in pixels.
    pub jitter: usize,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        Self {
            channels: 3,
            noise: 24.0,
            jitter: 1,
        }
    }
}

/// Whether pixel `(y, x)` of a `size × size` canvas belongs to the pattern
/// of class `class`. Four shape families (horizontal bar, vertical bar,
/// square outline, diagonal) repeat with shifted placement for higher
/// class indices.
fn on_pattern(class: usize, size: usize, y: isize, x: isize) -> bool {
    let s = size as isize;
    let thick = (s / 6).max(1);
    let variant = (class / 4) as isize;
    let offset = (s / 4 + variant * thick * 2) % (s - thick).max(1);
    match class % 4 {
        0 => (offset..offset + thick).contains(&y),
        1 => (offset..offset + thick).contains(&x),
        2 => {
            let (lo, hi) = (s / 4, s - s / 4 - 1 - variant % (s / 4).max(1));
            let inside = (lo..=hi).contains(&y) && (lo..=hi).contains(&x);
            let border = y < lo + thick || y > hi - thick || x < lo + thick || x > hi - thick;
            inside && border
        }
        _ => {
            let d = if variant % 2 == 0 { y - x } else { y + x - (s - 1) };
            d.abs() < thick
        }
    }
}

/// Class-dependent geometric patterns with Gaussian pixel noise. Labels
/// cycle `0, 1, …, classes−1` so every class is equally represented.
pub fn synthetic_shapes_with(
    n: usize,
    num_classes: usize,
    size: usize,
    seed: u64,
    opts: &SyntheticOptions,
) -> Result<LabeledImageSet> {
    if num_classes < 2 || n < num_classes {
        return Err(Error::Config(format!(
            "synthetic set needs n ≥ classes ≥ 2, got n={n}, classes={num_classes}"
        )));
    }
    if size < 6 || opts.channels == 0 {
        return Err(Error::Config(format!("synthetic images must be at least 6×6, got {size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0f32, opts.noise.max(0.0))
        .map_err(|e| Error::Config(format!("noise: {e}")))?;
    let c = opts.channels;
    let mut images = Vec::with_capacity(n * c * size * size);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % num_classes;
        let j = opts.jitter as i32;
        let (dy, dx) = if j > 0 {
            (rng.random_range(-j..=j) as isize, rng.random_range(-j..=j) as isize)
        } else {
            (0, 0)
        };
        for ch in 0..c {
            // each class tints its pattern differently across channels
            let tint = if c > 1 { 0.6 + 0.4 * (((class + ch) % c) as f32 / (c - 1) as f32) } else { 1.0 };
            for y in 0..size as isize {
                for x in 0..size as isize {
                    let base = if on_pattern(class, size, y - dy, x - dx) {
                        FOREGROUND * tint
                    } else {
                        BACKGROUND
                    };
                    let v = base + noise.sample(&mut rng);
                    images.push(v.round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        labels.push(class);
    }
    LabeledImageSet::new(images, labels, c, size, size, num_classes, Split::Train)
}

/// Three-channel patterns with default noise.
pub fn synthetic_shapes(n: usize, num_classes: usize, size: usize, seed: u64) -> Result<LabeledImageSet> {
    synthetic_shapes_with(n, num_classes, size, seed, &SyntheticOptions::default())
}
