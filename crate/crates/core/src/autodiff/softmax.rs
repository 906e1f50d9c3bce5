use crate::error::{Error, Result};

use super::{Tape, Tensor, Var};

/// (outer, axis length, inner) strides for reducing along `axis`.
fn axis_layout(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Row-wise log-softmax over contiguous rows of length `len`, max-shifted.
pub(crate) fn log_softmax_rows(x: &[f32], len: usize, scale: f32) -> Vec<f32> {
    let mut out = vec![0.0; x.len()];
    for (row, dst) in x.chunks(len).zip(out.chunks_mut(len)) {
        let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v * scale));
        let lse = row.iter().map(|&v| (v * scale - max).exp()).sum::<f32>().ln() + max;
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = v * scale - lse;
        }
    }
    out
}

impl Tape {
    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::InvalidAxis {
                op: "log_softmax",
                axis,
                rank: shape.len(),
            });
        }
        let (outer, len, inner) = axis_layout(&shape, axis);
        let xv = self.value(x).data();
        let mut out = vec![0.0; xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let max = (0..len).fold(f32::NEG_INFINITY, |m, j| m.max(xv[at(j)]));
                let lse = (0..len).map(|j| (xv[at(j)] - max).exp()).sum::<f32>().ln() + max;
                for j in 0..len {
                    out[at(j)] = xv[at(j)] - lse;
                }
            }
        }
        let value = Tensor::from_parts(shape, out);
        let y = self.len();
        Ok(self.push(value, &[x], move |g, vals, grads| {
            let yv = vals[y].data();
            let Some(dx) = grads.slot(x) else { return };
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| (o * len + j) * inner + i;
                    let gsum: f32 = (0..len).map(|j| g[at(j)]).sum();
                    for j in 0..len {
                        dx[at(j)] += g[at(j)] - yv[at(j)].exp() * gsum;
                    }
                }
            }
        }))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let len = *shape.last().expect("rank >= 1");
        let out: Vec<f32> = log_softmax_rows(self.value(x).data(), len, 1.0)
            .into_iter()
            .map(f32::exp)
            .collect();
        let value = Tensor::from_parts(shape, out);
        let y = self.len();
        Ok(self.push(value, &[x], move |g, vals, grads| {
            let yv = vals[y].data();
            let Some(dx) = grads.slot(x) else { return };
            for ((gr, yr), dr) in g.chunks(len).zip(yv.chunks(len)).zip(dx.chunks_mut(len)) {
                let dot: f32 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                for ((d, &gi), &yi) in dr.iter_mut().zip(gr).zip(yr) {
                    *d += yi * (gi - dot);
                }
            }
        }))
    }

    /// Mean over the batch of `-log_softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(Error::shape("cross_entropy", &shape, &[labels.len()]));
        }
        let (n, c) = (shape[0], shape[1]);
        if let Some(&label) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::LabelOutOfRange { label, classes: c });
        }
        let lsm = log_softmax_rows(self.value(logits).data(), c, 1.0);
        let loss = -labels
            .iter()
            .enumerate()
            .map(|(i, &l)| lsm[i * c + l])
            .sum::<f32>()
            / n as f32;
        let labels = labels.to_vec();
        Ok(self.push(Tensor::scalar(loss), &[logits], move |g, _, grads| {
            let Some(dx) = grads.slot(logits) else { return };
            let scale = g[0] / n as f32;
            for (i, &l) in labels.iter().enumerate() {
                for j in 0..c {
                    let p = lsm[i * c + j].exp();
                    let onehot = if j == l { 1.0 } else { 0.0 };
                    dx[i * c + j] += scale * (p - onehot);
                }
            }
        }))
    }

    /// `T² · mean_n Σ_c p (ln p − ln q)` with `p = softmax(teacher/T)` and
    /// `q = softmax(student/T)` over the last axis of `[N, C]` logits.
    ///
    /// The teacher is a constant: no gradient reaches it.
    pub fn kl_divergence(&mut self, teacher: Var, student: Var, temperature: f32) -> Result<Var> {
        if !(temperature > 0.0) {
            return Err(Error::InvalidTemperature(temperature));
        }
        let (st, ss) = (self.shape(teacher).to_vec(), self.shape(student).to_vec());
        if st != ss || st.len() != 2 {
            return Err(Error::shape("kl_divergence", &st, &ss));
        }
        let (n, c) = (st[0], st[1]);
        let inv_t = 1.0 / temperature;
        let log_p = log_softmax_rows(self.value(teacher).data(), c, inv_t);
        let log_q = log_softmax_rows(self.value(student).data(), c, inv_t);
        let t2 = temperature * temperature;
        let total: f32 = log_p
            .iter()
            .zip(&log_q)
            .map(|(&lp, &lq)| lp.exp() * (lp - lq))
            .sum();
        // rounding can push an exact zero slightly negative
        let loss = (t2 * total / n as f32).max(0.0);
        Ok(self.push(Tensor::scalar(loss), &[student], move |g, _, grads| {
            let Some(ds) = grads.slot(student) else { return };
            // d/ds of T²·KL = T·(q − p), per sample, averaged over N
            let scale = g[0] * temperature / n as f32;
            for ((d, &lp), &lq) in ds.iter_mut().zip(&log_p).zip(&log_q) {
                *d += scale * (lq.exp() - lp.exp());
            }
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_softmax_uniform_row() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::full(&[1, 4], 0.7));
        let y = tape.log_softmax(x, 1).unwrap();
        for &v in tape.value(y).data() {
            assert!((v - (0.25f32).ln()).abs() < 1e-6);
        }
    }

    #[test]
    fn log_softmax_invalid_axis() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::zeros(&[2, 3]));
        assert!(matches!(
            tape.log_softmax(x, 2),
            Err(Error::InvalidAxis { axis: 2, rank: 2, .. })
        ));
    }

    #[test]
    fn log_softmax_along_leading_axis() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_fn(&[3, 2], |i| i as f32));
        let y = tape.log_softmax(x, 0).unwrap();
        let yv = tape.value(y).data();
        for col in 0..2 {
            let lse: f32 = (0..3).map(|r| yv[r * 2 + col].exp()).sum();
            assert!((lse - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn cross_entropy_saturated_and_uniform() {
        let mut tape = Tape::new();
        let mut logits = Tensor::zeros(&[2, 10]);
        logits.data_mut()[3] = 1e6;
        logits.data_mut()[10 + 7] = 1e6;
        let x = tape.input(logits);
        let l = tape.cross_entropy(x, &[3, 7]).unwrap();
        assert!(tape.value(l).data()[0].abs() < 1e-6);

        let u = tape.input(Tensor::zeros(&[4, 10]));
        let l = tape.cross_entropy(u, &[0, 1, 2, 9]).unwrap();
        assert!((tape.value(l).data()[0] - 10f32.ln()).abs() < 1e-5);
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::zeros(&[1, 3]));
        assert!(matches!(
            tape.cross_entropy(x, &[3]),
            Err(Error::LabelOutOfRange { label: 3, classes: 3 })
        ));
    }

    #[test]
    fn kl_identical_is_zero_and_rejects_bad_temperature() {
        let mut tape = Tape::new();
        let a = tape.input(Tensor::from_fn(&[2, 5], |i| (i as f32).sin()));
        let l = tape.kl_divergence(a, a, 1.0).unwrap();
        assert_eq!(tape.value(l).data()[0], 0.0);
        assert!(matches!(
            tape.kl_divergence(a, a, 0.0),
            Err(Error::InvalidTemperature(_))
        ));
        assert!(tape.kl_divergence(a, a, -1.0).is_err());
    }

    #[test]
    fn kl_does_not_touch_teacher() {
        let mut tape = Tape::new();
        let t = tape.leaf(Tensor::new(&[1, 2], vec![10.0, 0.0]).unwrap(), true);
        let s = tape.leaf(Tensor::new(&[1, 2], vec![0.0, 10.0]).unwrap(), true);
        let l = tape.kl_divergence(t, s, 1.0).unwrap();
        tape.backward(l).unwrap();
        assert!(tape.grad(t).is_none());
        assert!(tape.grad(s).is_some());
    }
}
