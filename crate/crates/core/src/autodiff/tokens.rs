use crate::error::{Error, Result};

use super::{Tape, Tensor, Var};

impl Tape {
    /// `[N,T,H·hd] -> [N·H,T,hd]`.
    pub fn split_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || heads == 0 || s[2] % heads != 0 {
            return Err(Error::invalid("split_heads", format!("{s:?} into {heads} heads")));
        }
        let (n, t, d) = (s[0], s[1], s[2]);
        let hd = d / heads;
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for i in 0..n {
            for tok in 0..t {
                for h in 0..heads {
                    let from = (i * t + tok) * d + h * hd;
                    let to = ((i * heads + h) * t + tok) * hd;
                    out[to..to + hd].copy_from_slice(&src[from..from + hd]);
                }
            }
        }
        let value = Tensor::from_parts(vec![n * heads, t, hd], out);
        Ok(self.push(value, &[x], move |g, _, grads| {
            let Some(dx) = grads.slot(x) else { return };
            for i in 0..n {
                for tok in 0..t {
                    for h in 0..heads {
                        let from = (i * t + tok) * d + h * hd;
                        let to = ((i * heads + h) * t + tok) * hd;
                        for j in 0..hd {
                            dx[from + j] += g[to + j];
                        }
                    }
                }
            }
        }))
    }

    /// `[N·H,T,hd] -> [N,T,H·hd]`.
    pub fn merge_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || heads == 0 || s[0] % heads != 0 {
            return Err(Error::invalid("merge_heads", format!("{s:?} from {heads} heads")));
        }
        let (n, t, hd) = (s[0] / heads, s[1], s[2]);
        let d = hd * heads;
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for i in 0..n {
            for tok in 0..t {
                for h in 0..heads {
                    let to = (i * t + tok) * d + h * hd;
                    let from = ((i * heads + h) * t + tok) * hd;
                    out[to..to + hd].copy_from_slice(&src[from..from + hd]);
                }
            }
        }
        let value = Tensor::from_parts(vec![n, t, d], out);
        Ok(self.push(value, &[x], move |g, _, grads| {
            let Some(dx) = grads.slot(x) else { return };
            for i in 0..n {
                for tok in 0..t {
                    for h in 0..heads {
                        let to = (i * t + tok) * d + h * hd;
                        let from = ((i * heads + h) * t + tok) * hd;
                        for j in 0..hd {
                            dx[from + j] += g[to + j];
                        }
                    }
                }
            }
        }))
    }

    /// Non-overlapping `p×p` patches as tokens: `[N,C,H,W] -> [N,(H/p)(W/p),C·p·p]`.
    pub fn patchify(&mut self, x: Var, patch: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || patch == 0 || s[2] % patch != 0 || s[3] % patch != 0 {
            return Err(Error::invalid("patchify", format!("{s:?} into {patch}x{patch} patches")));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (ph, pw) = (h / patch, w / patch);
        let (t, d) = (ph * pw, c * patch * patch);
        // token-major destination index for every source element
        let mut index = vec![0usize; n * c * h * w];
        for i in 0..n {
            for ch in 0..c {
                for y in 0..h {
                    for xx in 0..w {
                        let tok = (y / patch) * pw + xx / patch;
                        let feat = (ch * patch + y % patch) * patch + xx % patch;
                        index[((i * c + ch) * h + y) * w + xx] = (i * t + tok) * d + feat;
                    }
                }
            }
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for (j, &dst) in index.iter().enumerate() {
            out[dst] = src[j];
        }
        let value = Tensor::from_parts(vec![n, t, d], out);
        Ok(self.push(value, &[x], move |g, _, grads| {
            let Some(dx) = grads.slot(x) else { return };
            for (j, &dst) in index.iter().enumerate() {
                dx[j] += g[dst];
            }
        }))
    }

    /// Prepends one shared token `[D]` to every sequence of `[N,T,D]`.
    pub fn prepend_token(&mut self, x: Var, token: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || self.shape(token) != [s[2]] {
            return Err(Error::shape("prepend_token", &s, self.shape(token)));
        }
        let (n, t, d) = (s[0], s[1], s[2]);
        let (xv, tv) = (self.value(x).data(), self.value(token).data());
        let mut out = Vec::with_capacity(n * (t + 1) * d);
        for seq in xv.chunks(t * d) {
            out.extend_from_slice(tv);
            out.extend_from_slice(seq);
        }
        let value = Tensor::from_parts(vec![n, t + 1, d], out);
        Ok(self.push(value, &[x, token], move |g, _, grads| {
            if let Some(dt) = grads.slot(token) {
                for seq in g.chunks((t + 1) * d) {
                    dt.iter_mut().zip(&seq[..d]).for_each(|(a, b)| *a += b);
                }
            }
            if let Some(dx) = grads.slot(x) {
                for (dseq, seq) in dx.chunks_mut(t * d).zip(g.chunks((t + 1) * d)) {
                    dseq.iter_mut().zip(&seq[d..]).for_each(|(a, b)| *a += b);
                }
            }
        }))
    }

    /// Token `index` of every sequence: `[N,T,D] -> [N,D]`.
    pub fn select_token(&mut self, x: Var, index: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || index >= s[1] {
            return Err(Error::invalid("select_token", format!("token {index} of {s:?}")));
        }
        let (n, t, d) = (s[0], s[1], s[2]);
        let out: Vec<f32> = self
            .value(x)
            .data()
            .chunks(t * d)
            .flat_map(|seq| seq[index * d..(index + 1) * d].iter().copied())
            .collect();
        let value = Tensor::from_parts(vec![n, d], out);
        Ok(self.push(value, &[x], move |g, _, grads| {
            let Some(dx) = grads.slot(x) else { return };
            for (i, gi) in g.chunks(d).enumerate() {
                let base = i * t * d + index * d;
                dx[base..base + d].iter_mut().zip(gi).for_each(|(a, b)| *a += b);
            }
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_then_merge_round_trips() {
        let mut tape = Tape::new();
        let xt = Tensor::from_fn(&[2, 3, 8], |i| i as f32);
        let x = tape.input(xt.clone());
        let s = tape.split_heads(x, 2).unwrap();
        assert_eq!(tape.shape(s), &[4, 3, 4]);
        // head 1 of sample 0, token 0 holds features 4..8
        assert_eq!(&tape.value(s).data()[12..16], &[4.0, 5.0, 6.0, 7.0]);
        let m = tape.merge_heads(s, 2).unwrap();
        assert_eq!(tape.value(m), &xt);
    }

    #[test]
    fn patchify_groups_pixels_by_patch() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_fn(&[1, 1, 4, 4], |i| i as f32));
        let p = tape.patchify(x, 2).unwrap();
        assert_eq!(tape.shape(p), &[1, 4, 4]);
        assert_eq!(&tape.value(p).data()[..8], &[0.0, 1.0, 4.0, 5.0, 2.0, 3.0, 6.0, 7.0]);
        assert!(tape.patchify(x, 3).is_err());
    }

    #[test]
    fn prepend_and_select() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_fn(&[2, 2, 3], |i| i as f32));
        let tok = tape.input(Tensor::full(&[3], -1.0));
        let y = tape.prepend_token(x, tok).unwrap();
        assert_eq!(tape.shape(y), &[2, 3, 3]);
        let c = tape.select_token(y, 0).unwrap();
        assert_eq!(tape.value(c).data(), &[-1.0; 6]);
        let last = tape.select_token(y, 2).unwrap();
        assert_eq!(tape.value(last).data(), &[3.0, 4.0, 5.0, 9.0, 10.0, 11.0]);
    }
}
