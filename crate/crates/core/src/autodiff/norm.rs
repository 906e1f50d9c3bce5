use crate::error::{Error, Result};

use super::{Tape, Tensor, Var};

/// Where batch-norm statistics come from.
pub enum BnStats<'a> {
    /// Normalise with batch statistics and fold them into the running
    /// estimates: `new = (1 − momentum)·old + momentum·batch`.
    Train {
        running_mean: &'a mut [f32],
        running_var: &'a mut [f32],
        momentum: f32,
    },
    /// Normalise with the running estimates; nothing is written.
    Eval {
        running_mean: &'a [f32],
        running_var: &'a [f32],
    },
}

/// Shared backward of an affine normalisation over groups of `m` elements.
/// `xhat` is the normalised input and `inv_std` the per-group scale.
fn normalized_input_grad(dxhat: &[f32], xhat: &[f32], inv_std: f32, m: usize, dx: &mut [f32]) {
    let mf = m as f32;
    let sum: f32 = dxhat.iter().sum();
    let dot: f32 = dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum();
    for ((d, &dh), &xh) in dx.iter_mut().zip(dxhat).zip(xhat) {
        *d += inv_std / mf * (mf * dh - sum - xh * dot);
    }
}

impl Tape {
    /// Per-channel normalisation of `[N,C,...]`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: BnStats<'_>,
        eps: f32,
    ) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::invalid("batch_norm", format!("rank >= 2 required, got {shape:?}")));
        }
        let (n, c) = (shape[0], shape[1]);
        let plane: usize = shape[2..].iter().product();
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape("batch_norm", &shape, self.shape(gamma)));
        }
        let xv = self.value(x).data();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let m = n * plane;
        let channel = |ch: usize| {
            (0..n).flat_map(move |i| {
                let base = (i * c + ch) * plane;
                base..base + plane
            })
        };

        let training = matches!(stats, BnStats::Train { .. });
        let mut mean = vec![0.0f32; c];
        let mut var = vec![0.0f32; c];
        match stats {
            BnStats::Train {
                running_mean,
                running_var,
                momentum,
            } => {
                if running_mean.len() != c || running_var.len() != c {
                    return Err(Error::shape("batch_norm stats", &shape, &[running_mean.len()]));
                }
                for ch in 0..c {
                    let mu = channel(ch).map(|j| f64::from(xv[j])).sum::<f64>() / m as f64;
                    let v = channel(ch)
                        .map(|j| (f64::from(xv[j]) - mu).powi(2))
                        .sum::<f64>()
                        / m as f64;
                    mean[ch] = mu as f32;
                    var[ch] = v as f32;
                    let unbiased = if m > 1 { v * m as f64 / (m - 1) as f64 } else { v };
                    running_mean[ch] = (1.0 - momentum) * running_mean[ch] + momentum * mu as f32;
                    running_var[ch] = (1.0 - momentum) * running_var[ch] + momentum * unbiased as f32;
                }
            }
            BnStats::Eval {
                running_mean,
                running_var,
            } => {
                if running_mean.len() != c || running_var.len() != c {
                    return Err(Error::shape("batch_norm stats", &shape, &[running_mean.len()]));
                }
                mean.copy_from_slice(running_mean);
                var.copy_from_slice(running_var);
            }
        }
        let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        for ch in 0..c {
            for j in channel(ch) {
                xhat[j] = (xv[j] - mean[ch]) * inv_std[ch];
                out[j] = gv[ch] * xhat[j] + bv[ch];
            }
        }
        let value = Tensor::from_parts(shape, out);
        Ok(self.push(value, &[x, gamma, beta], move |g, vals, grads| {
            let gv = vals[gamma.0].data();
            let channel = |ch: usize| {
                (0..n).flat_map(move |i| {
                    let base = (i * c + ch) * plane;
                    base..base + plane
                })
            };
            if let Some(dg) = grads.slot(gamma) {
                for (ch, d) in dg.iter_mut().enumerate() {
                    *d += channel(ch).map(|j| g[j] * xhat[j]).sum::<f32>();
                }
            }
            if let Some(db) = grads.slot(beta) {
                for (ch, d) in db.iter_mut().enumerate() {
                    *d += channel(ch).map(|j| g[j]).sum::<f32>();
                }
            }
            let Some(dx) = grads.slot(x) else { return };
            for ch in 0..c {
                if training {
                    let idx: Vec<usize> = channel(ch).collect();
                    let dxhat: Vec<f32> = idx.iter().map(|&j| g[j] * gv[ch]).collect();
                    let xh: Vec<f32> = idx.iter().map(|&j| xhat[j]).collect();
                    let mut dloc = vec![0.0; idx.len()];
                    normalized_input_grad(&dxhat, &xh, inv_std[ch], m, &mut dloc);
                    for (&j, d) in idx.iter().zip(dloc) {
                        dx[j] += d;
                    }
                } else {
                    for j in channel(ch) {
                        dx[j] += g[j] * gv[ch] * inv_std[ch];
                    }
                }
            }
        }))
    }

    /// Normalisation over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f32) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().expect("rank >= 1");
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::shape("layer_norm", &shape, self.shape(gamma)));
        }
        let xv = self.value(x).data();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let rows = xv.len() / d;
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mu = row.iter().sum::<f32>() / d as f32;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f32>() / d as f32;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let xh = (row[j] - mu) * is;
                xhat[r * d + j] = xh;
                out[r * d + j] = gv[j] * xh + bv[j];
            }
        }
        let value = Tensor::from_parts(shape, out);
        Ok(self.push(value, &[x, gamma, beta], move |g, vals, grads| {
            let gv = vals[gamma.0].data();
            if let Some(dg) = grads.slot(gamma) {
                for (gi, xh) in g.chunks(d).zip(xhat.chunks(d)) {
                    for j in 0..d {
                        dg[j] += gi[j] * xh[j];
                    }
                }
            }
            if let Some(db) = grads.slot(beta) {
                for gi in g.chunks(d) {
                    db.iter_mut().zip(gi).for_each(|(a, b)| *a += b);
                }
            }
            let Some(dx) = grads.slot(x) else { return };
            let mut dxhat = vec![0.0; d];
            for r in 0..rows {
                let gi = &g[r * d..(r + 1) * d];
                dxhat.iter_mut().zip(gi).zip(gv).for_each(|((o, a), b)| *o = a * b);
                normalized_input_grad(
                    &dxhat,
                    &xhat[r * d..(r + 1) * d],
                    inv_std[r],
                    d,
                    &mut dx[r * d..(r + 1) * d],
                );
            }
        }))
    }
}
