use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

use super::{ImageBatch, LabeledImageSet};

/// Per-channel mean and standard deviation of pixels scaled to `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl ChannelStats {
    /// Statistics over every image of `set`.
    pub fn compute(set: &LabeledImageSet) -> Result<Self> {
        if set.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let plane = set.height * set.width;
        let mut sum = vec![0f64; set.channels];
        let mut sq = vec![0f64; set.channels];
        for (p, chunk) in set.images.chunks(plane).enumerate() {
            let c = p % set.channels;
            for &v in chunk {
                let v = f64::from(v) / 255.0;
                sum[c] += v;
                sq[c] += v * v;
            }
        }
        let count = (set.len() * plane) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| ((q / count - m * m).max(0.0).sqrt().max(1e-3)) as f32)
            .collect();
        Ok(Self {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            std,
        })
    }
}

/// `(p/255 − mean_c) / std_c` as an `[N, C, H, W]` tensor.
pub fn normalize(batch: &ImageBatch, stats: &ChannelStats) -> Result<Tensor> {
    let [_, c, h, w] = batch.dims;
    if stats.mean.len() != c || stats.std.len() != c {
        return Err(Error::invalid(
            "normalize",
            format!("{c} channels but stats for {}", stats.mean.len()),
        ));
    }
    let plane = h * w;
    let data = batch
        .pixels
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let ch = i / plane % c;
            (f32::from(p) / 255.0 - stats.mean[ch]) / stats.std[ch]
        })
        .collect();
    Tensor::new(&batch.dims, data)
}

/// Inverse of [`normalize`], on the `[0, 1]` pixel scale.
pub fn denormalize(x: &Tensor, stats: &ChannelStats) -> Vec<f32> {
    let s = x.shape();
    let (c, plane) = (s[1], s[2] * s[3]);
    x.data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let ch = i / plane % c;
            v * stats.std[ch] + stats.mean[ch]
        })
        .collect()
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

/// Reflect-pads every image by `crop_pad`, crops a random window of the
/// original size, then flips horizontally with probability `hflip_prob`.
/// Draws two offsets and one flip decision per image, in batch order.
pub fn augment(batch: &mut ImageBatch, crop_pad: usize, hflip_prob: f64, rng: &mut impl Rng) {
    let [n, c, h, w] = batch.dims;
    let per = c * h * w;
    let p = crop_pad as i32;
    let mut out = vec![0u8; per];
    for img in 0..n {
        let dy = if p > 0 { rng.random_range(-p..=p) as isize } else { 0 };
        let dx = if p > 0 { rng.random_range(-p..=p) as isize } else { 0 };
        let flip = hflip_prob > 0.0 && rng.random_bool(hflip_prob.min(1.0));
        if dy == 0 && dx == 0 && !flip {
            continue;
        }
        let src = &batch.pixels[img * per..(img + 1) * per];
        for ch in 0..c {
            for y in 0..h {
                let sy = reflect(y as isize + dy, h);
                for x in 0..w {
                    let xx = if flip { w - 1 - x } else { x };
                    let sx = reflect(xx as isize + dx, w);
                    out[(ch * h + y) * w + x] = src[(ch * h + sy) * w + sx];
                }
            }
        }
        batch.pixels[img * per..(img + 1) * per].copy_from_slice(&out);
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::data::synthetic_shapes;

    fn batch() -> ImageBatch {
        synthetic_shapes(8, 4, 8, 5).unwrap().batch(&[0, 1, 2, 3])
    }

    #[test]
    fn no_op_parameters() {
        let mut b = batch();
        let orig = b.clone();
        augment(&mut b, 0, 0.0, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(b, orig);
    }

    #[test]
    fn forced_flip_is_involution() {
        let mut b = batch();
        let orig = b.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        augment(&mut b, 0, 1.0, &mut rng);
        assert_ne!(b, orig);
        assert_eq!(b.pixels[7], orig.pixels[0]);
        augment(&mut b, 0, 1.0, &mut rng);
        assert_eq!(b, orig);
    }

    #[test]
    fn seeded_crops_reproduce() {
        let run = |seed| {
            let mut b = batch();
            augment(&mut b, 4, 0.5, &mut ChaCha8Rng::seed_from_u64(seed));
            b
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }

    #[test]
    fn reflect_indices() {
        let r: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(r, [3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
    }

    #[test]
    fn normalize_round_trip() {
        let set = synthetic_shapes(16, 4, 8, 6).unwrap();
        let stats = ChannelStats::compute(&set).unwrap();
        let b = set.batch(&[0, 5, 9]);
        let x = normalize(&b, &stats).unwrap();
        let back = denormalize(&x, &stats);
        for (p, v) in b.pixels.iter().zip(back) {
            assert!((f32::from(*p) / 255.0 - v).abs() < 1e-5);
        }
        let all = normalize(&set.batch(&(0..16).collect::<Vec<_>>()), &stats).unwrap();
        let plane = 64;
        for c in 0..3 {
            let vals: Vec<f64> = all
                .data()
                .chunks(plane)
                .enumerate()
                .filter(|(i, _)| i % 3 == c)
                .flat_map(|(_, ch)| ch.iter().map(|&v| f64::from(v)))
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-4);
        }
    }
}
